//! Time grids, sample paths, particle ensembles and seeded Brownian motion.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats;

/// Discretization of a time window `[start, horizon]`.
///
/// Grids produced by [`build_grid`] start at zero. Windows cut out of a grid
/// by [`TimeGrid::window`] keep absolute times, so generators and losses see
/// the same `t` whether a problem is solved globally or piecewise.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    nodes: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn from_nodes(nodes: Vec<T>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("a time grid needs at least two nodes"));
        }
        if nodes[0] < T::zero() || !nodes[0].is_finite() {
            return Err(Error::invalid("grid must start at a finite non-negative time"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::invalid("grid nodes must be strictly increasing"));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(horizon: T, steps: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        let dt = horizon / T::from_count(steps);
        let mut nodes: Vec<T> = (0..steps).map(|k| dt * T::from_count(k)).collect();
        nodes.push(horizon);
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> T {
        self.nodes[0]
    }

    pub fn horizon(&self) -> T {
        *self.nodes.last().unwrap()
    }

    pub fn time(&self, node: usize) -> T {
        self.nodes[node]
    }

    /// Length of step `k`, i.e. `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> T {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn max_dt(&self) -> T {
        (0..self.steps()).map(|k| self.dt(k)).fold(T::zero(), T::max)
    }

    /// Sub-grid on nodes `first..=last`.
    pub fn window(&self, first: usize, last: usize) -> Result<Self> {
        if first >= last || last >= self.len() {
            return Err(Error::invalid(format!("invalid window {first}..={last}")));
        }
        Self::from_nodes(self.nodes[first..=last].to_vec())
    }
}

/// Uniform grid on `[0, horizon]` with `steps + 1` nodes.
pub fn build_grid<T: Real>(horizon: T, steps: usize) -> Result<TimeGrid<T>> {
    TimeGrid::uniform(horizon, steps)
}

/// One path sampled at the nodes of a grid (piecewise-linear in between).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<T> {
    grid: Arc<TimeGrid<T>>,
    values: Vec<T>,
}

impl<T: Real> SamplePath<T> {
    pub fn new(grid: Arc<TimeGrid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "path has {} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<TimeGrid<T>>, f: impl Fn(T) -> T) -> Self {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<TimeGrid<T>>) -> Self {
        let values = vec![T::zero(); grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> T {
        self.values[0]
    }

    pub fn last(&self) -> T {
        *self.values.last().unwrap()
    }

    /// Linear interpolation at time `t` (clamped to the grid range).
    pub fn at(&self, t: T) -> T {
        let nodes = self.grid.nodes();
        if t <= nodes[0] {
            return self.values[0];
        }
        if t >= self.grid.horizon() {
            return self.last();
        }
        let k = nodes.partition_point(|&u| u <= t) - 1;
        let w = (t - nodes[k]) / (nodes[k + 1] - nodes[k]);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }

    pub fn sup_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn sup_gap(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// `N` aligned particle paths. Storage is node-major so that the cross
/// section at each node (the empirical law of the particle system at that
/// time) is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    grid: Arc<TimeGrid<T>>,
    particles: usize,
    data: Vec<T>,
}

impl<T: Real> Ensemble<T> {
    pub fn zeros(grid: Arc<TimeGrid<T>>, particles: usize) -> Self {
        let data = vec![T::zero(); grid.len() * particles];
        Self { grid, particles, data }
    }

    /// Builds an ensemble from node-major data.
    pub fn from_node_major(grid: Arc<TimeGrid<T>>, particles: usize, data: Vec<T>) -> Result<Self> {
        if particles == 0 {
            return Err(Error::invalid("ensemble needs at least one particle"));
        }
        if data.len() != grid.len() * particles {
            return Err(Error::invalid(format!(
                "ensemble data has {} values, expected {} nodes x {} particles",
                data.len(),
                grid.len(),
                particles
            )));
        }
        Ok(Self { grid, particles, data })
    }

    /// Builds an ensemble from per-node cross sections.
    pub fn from_cross_sections(grid: Arc<TimeGrid<T>>, sections: Vec<Vec<T>>) -> Result<Self> {
        if sections.len() != grid.len() {
            return Err(Error::invalid("one cross section per grid node required"));
        }
        let particles = sections[0].len();
        if sections.iter().any(|s| s.len() != particles) {
            return Err(Error::invalid("cross sections must have equal sizes"));
        }
        let data = sections.into_iter().flatten().collect();
        Self::from_node_major(grid, particles, data)
    }

    pub fn grid(&self) -> &Arc<TimeGrid<T>> {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn cross_section(&self, node: usize) -> &[T] {
        &self.data[node * self.particles..(node + 1) * self.particles]
    }

    pub fn cross_section_mut(&mut self, node: usize) -> &mut [T] {
        let n = self.particles;
        &mut self.data[node * n..(node + 1) * n]
    }

    pub fn value(&self, node: usize, particle: usize) -> T {
        self.data[node * self.particles + particle]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn particle_path(&self, particle: usize) -> SamplePath<T> {
        let values = (0..self.nodes()).map(|k| self.value(k, particle)).collect();
        SamplePath { grid: self.grid.clone(), values }
    }

    /// Path of cross-sectional means.
    pub fn mean_path(&self) -> SamplePath<T> {
        let values = (0..self.nodes()).map(|k| stats::mean(self.cross_section(k))).collect();
        SamplePath { grid: self.grid.clone(), values }
    }

    /// Ensemble restricted to nodes `first..=last`.
    pub fn window(&self, first: usize, last: usize) -> Result<Self> {
        let grid = Arc::new(self.grid.window(first, last)?);
        let data = self.data[first * self.particles..(last + 1) * self.particles].to_vec();
        Ok(Self { grid, particles: self.particles, data })
    }

    /// Maximum over nodes of the root-mean-square particle gap.
    pub fn sup_rms_gap(&self, other: &Self) -> T {
        (0..self.nodes())
            .map(|k| stats::rms_gap(self.cross_section(k), other.cross_section(k)))
            .fold(T::zero(), T::max)
    }
}

/// Seed of the particle system. Particle `i` draws from ChaCha stream `i`
/// of this seed, so an ensemble does not depend on thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn particle_rng(&self, particle: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(particle as u64);
        rng
    }
}

/// Simulates `n` standard Brownian paths on `grid`, all starting at zero.
pub fn simulate_brownian<T: Real>(grid: &Arc<TimeGrid<T>>, n: usize, rng: &RngSpec) -> Result<Ensemble<T>> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 particles, got {n}")));
    }
    let steps = grid.steps();
    let sqrt_dt: Vec<T> = (0..steps).map(|k| grid.dt(k).sqrt()).collect();
    let paths: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.particle_rng(i);
            let mut b = T::zero();
            let mut path = Vec::with_capacity(steps + 1);
            path.push(b);
            for s in &sqrt_dt {
                b = b + *s * T::sample_standard_normal(&mut r);
                path.push(b);
            }
            path
        })
        .collect();
    let nodes = steps + 1;
    let mut data = vec![T::zero(); nodes * n];
    data.par_chunks_mut(n).enumerate().for_each(|(k, section)| {
        for (i, slot) in section.iter_mut().enumerate() {
            *slot = paths[i][k];
        }
    });
    Ensemble::from_node_major(grid.clone(), n, data)
}

/// Mean of the cross section of `e` at `node`.
pub fn empirical_mean<T: Real>(e: &Ensemble<T>, node: usize) -> Result<T> {
    if node >= e.nodes() {
        return Err(Error::invalid(format!(
            "node {node} out of range for {} nodes",
            e.nodes()
        )));
    }
    Ok(stats::mean(e.cross_section(node)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn uniform_grids() {
        let g = build_grid(1.0, 4).unwrap();
        assert!(close(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]));
        let g = build_grid(1.0, 1).unwrap();
        assert!(close(g.nodes(), &[0.0, 1.0]));
        let g = build_grid(0.5, 5).unwrap();
        assert!(close(g.nodes(), &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]));
        assert_eq!(g.horizon(), 0.5);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(build_grid(0.0, 4).is_err());
        assert!(build_grid(-1.0, 4).is_err());
        assert!(build_grid(1.0, 0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn empirical_mean_checks_range() {
        let g = Arc::new(build_grid(1.0, 2).unwrap());
        let e = Ensemble::from_cross_sections(
            g,
            vec![vec![-1.0, 1.0], vec![2.0, 2.0], vec![0.0, 3.0]],
        )
        .unwrap();
        assert_eq!(empirical_mean(&e, 0).unwrap(), 0.0);
        assert_eq!(empirical_mean(&e, 1).unwrap(), 2.0);
        assert_eq!(empirical_mean(&e, 2).unwrap(), 1.5);
        assert!(empirical_mean(&e, 3).is_err());
    }

    #[test]
    fn brownian_needs_two_particles() {
        let g = Arc::new(build_grid(1.0, 4).unwrap());
        assert!(simulate_brownian::<f64>(&g, 1, &RngSpec::new(1)).is_err());
    }

    #[test]
    fn brownian_is_reproducible_and_thread_independent() {
        let g = Arc::new(build_grid(1.0, 8).unwrap());
        let a = simulate_brownian::<f64>(&g, 500, &RngSpec::new(9)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_brownian::<f64>(&g, 500, &RngSpec::new(9)).unwrap());
        assert_eq!(a, b);
        let c = simulate_brownian::<f64>(&g, 500, &RngSpec::new(10)).unwrap();
        assert_ne!(a, c);
        assert!(a.cross_section(0).iter().all(|&v| v == 0.0));
    }

    /// With n = 1e5 the sample variance of B_T has standard error
    /// T*sqrt(2/(n-1)) ~ 0.0045*T, so a 5% band is more than ten sigma wide.
    #[test]
    fn brownian_terminal_moments() {
        let g = Arc::new(build_grid(2.0, 10).unwrap());
        let n = 100_000;
        let e = simulate_brownian::<f64>(&g, n, &RngSpec::new(2024)).unwrap();
        let terminal = e.cross_section(10);
        let m = stats::mean(terminal);
        assert!(m.abs() <= 4.0 * (2.0 / n as f64).sqrt(), "mean {m}");
        let v = stats::variance(terminal);
        assert!((v - 2.0).abs() <= 0.05 * 2.0, "variance {v}");
        // increments are centred with variance dt
        let inc: Vec<f64> = (0..n).map(|i| e.value(4, i) - e.value(3, i)).collect();
        assert!((stats::variance(&inc) - 0.2).abs() < 0.01);
    }

    #[test]
    fn sample_path_interpolates() {
        let g = Arc::new(build_grid(1.0, 2).unwrap());
        let p = SamplePath::new(g, vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(p.at(0.25), 0.5);
        assert_eq!(p.at(0.75), 2.0);
        assert_eq!(p.at(2.0), 3.0);
    }

    #[test]
    fn window_keeps_absolute_time() {
        let g = Arc::new(build_grid(1.0, 4).unwrap());
        let e = Ensemble::<f64>::zeros(g, 3);
        let w = e.window(2, 4).unwrap();
        assert_eq!(w.grid().start(), 0.5);
        assert_eq!(w.nodes(), 3);
    }
}
