//! Penalization of linear mean obstacles.
//!
//! The reflection is replaced by the drift `n (E[Y] - l)^- - n (E[Y] - r)^+`.
//! Since the drift depends on the mean only, it is integrated on the mean
//! dynamics inside each time step: trapezoidal sub-steps, implicit in the
//! mean, with the generator mean frozen over the step. The resulting force
//! is added to every particle.

use rayon::prelude::*;
use serde::Serialize;

use crate::bsde::backward_sweep;
use crate::constraints::LinearObstacles;
use crate::diagnostics::{rate_fit, RateFit};
use crate::error::{Error, Result};
use crate::grid::{Ensemble, SamplePath};
use crate::mrbsde::{check_terminal, picard_solve, terminal_tolerance, MRSolution, PenaltyConfig, Sampled, Scenario};
use crate::scalar::{positive_part, Real};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySolution<T> {
    pub n: T,
    pub y: Ensemble<T>,
    pub z: Ensemble<T>,
    /// `K^n = K^{n,l} - K^{n,r}`.
    pub k: SamplePath<T>,
    /// `K^{n,l}`, driven by `(E[Y] - l)^-`.
    pub push_up: SamplePath<T>,
    /// `K^{n,r}`, driven by `(E[Y] - r)^+`.
    pub push_down: SamplePath<T>,
    pub mean_y: Vec<T>,
    /// Total number of mean sub-steps.
    pub substeps: usize,
}

/// Penalization is defined for linear obstacles only: the scenario must carry
/// [`LinearObstacles`] and its losses must be affine in `x` at every node.
fn obstacles_of<T: Real>(sc: &Scenario<T>, sampled: &Sampled<T>) -> Result<LinearObstacles<T>> {
    let obs = sc
        .obstacles
        .clone()
        .ok_or_else(|| Error::invalid("penalization requires linear obstacles"))?;
    for &t in sampled.bm.grid().nodes() {
        if sc.losses.lower.affine_at(t).is_none() || sc.losses.upper.affine_at(t).is_none() {
            return Err(Error::invalid("penalization is only defined for linear constraints"));
        }
    }
    Ok(obs)
}

/// One trapezoidal sub-step of `dm = -(c + g(s, m)) ds` backward from `m`
/// (obstacles `(l1, r1)` at the start) to the returned value (obstacles
/// `(l0, r0)`), where `g = n (l - m)^+ - n (m - r)^+`. Returns the new mean
/// and the up and down increments.
fn trapezoid_step<T: Real>(m: T, c: T, h: T, n: T, (l1, r1): (T, T), (l0, r0): (T, T)) -> (T, T, T) {
    let theta = h / T::lit(2.0);
    let up_old = n * positive_part(l1 - m);
    let down_old = n * positive_part(m - r1);
    let rhs = m + h * c + theta * (up_old - down_old);
    // m - theta g(m) is increasing and piecewise linear, so exactly one branch applies
    let new = if rhs < l0 {
        (rhs + theta * n * l0) / (T::one() + theta * n)
    } else if rhs > r0 {
        (rhs + theta * n * r0) / (T::one() + theta * n)
    } else {
        rhs
    };
    let up = theta * (up_old + n * positive_part(l0 - new));
    let down = theta * (down_old + n * positive_part(new - r0));
    (new, up, down)
}

fn substeps_for<T: Real>(cfg: &PenaltyConfig<T>, n: T, dt: T) -> usize {
    let by_stiffness = (n * dt / cfg.stiff_max).ceil();
    let by_size = (dt / cfg.max_substep).ceil();
    by_stiffness.max(by_size).max(T::one()).as_f64() as usize
}

/// Particle scheme for the penalized equation at level `n`.
pub fn solve_penalized<T: Real>(sc: &Scenario<T>, sampled: &Sampled<T>, n: T) -> Result<PenaltySolution<T>> {
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::invalid(format!("penalty level must be positive, got {n}")));
    }
    let obs = obstacles_of(sc, sampled)?;
    let cfg = &sc.config;
    let bm = &sampled.bm;
    let grid = bm.grid().clone();
    let m_steps = grid.steps();
    let lp = obs.loss_pair();
    let tol = terminal_tolerance(&lp, grid.horizon(), &sampled.terminal, cfg.stat_sigmas, cfg.reflection.root_tol);
    check_terminal(&lp, grid.horizon(), &sampled.terminal, tol)?;

    let mut up_inc = vec![T::zero(); m_steps];
    let mut down_inc = vec![T::zero(); m_steps];
    let mut substeps = 0usize;
    let mut hook = |k: usize, mean_e: T, mean_f: T| -> Result<T> {
        let (t0, t1) = (grid.time(k), grid.time(k + 1));
        let steps = substeps_for(&cfg.penalty, n, t1 - t0);
        let h = (t1 - t0) / T::from_count(steps);
        let mut m = mean_e;
        let (mut up, mut down) = (T::zero(), T::zero());
        let mut hi_t = t1;
        for j in 1..=steps {
            let lo_t = if j == steps { t0 } else { t1 - h * T::from_count(j) };
            let (next, du, dd) =
                trapezoid_step(m, mean_f, hi_t - lo_t, n, (obs.lower(hi_t), obs.upper(hi_t)), (obs.lower(lo_t), obs.upper(lo_t)));
            m = next;
            up = up + du;
            down = down + dd;
            hi_t = lo_t;
        }
        substeps += steps;
        up_inc[k] = up;
        down_inc[k] = down;
        Ok(up - down)
    };
    let sol = backward_sweep(&sampled.terminal, &sc.generator, bm, &cfg.regression, Some(&mut hook))?;

    let accumulate = |inc: &[T]| -> Result<SamplePath<T>> {
        let mut v = Vec::with_capacity(m_steps + 1);
        v.push(T::zero());
        for d in inc {
            let last = *v.last().unwrap();
            v.push(last + *d);
        }
        SamplePath::new(grid.clone(), v)
    };
    let push_up = accumulate(&up_inc)?;
    let push_down = accumulate(&down_inc)?;
    let k = SamplePath::new(
        grid.clone(),
        push_up.values().iter().zip(push_down.values()).map(|(u, d)| *u - *d).collect(),
    )?;
    let mean_y = (0..=m_steps).map(|k| stats::mean(sol.y.cross_section(k))).collect();
    Ok(PenaltySolution { n, y: sol.y, z: sol.z, k, push_up, push_down, mean_y, substeps })
}

/// Doubly reflected solve of the same scenario against the obstacle losses,
/// allowing the zero-width band the obstacles have at `t = 0`.
pub fn penalty_reference<T: Real>(sc: &Scenario<T>, sampled: &Sampled<T>) -> Result<MRSolution<T>> {
    let obs = obstacles_of(sc, sampled)?;
    let mut reference = sc.clone();
    reference.losses = obs.loss_pair();
    reference.config.reflection.band_min = T::zero();
    picard_solve(&reference.problem(sampled))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow<T> {
    pub n: T,
    /// `max_k |E[Y^n_k] - E[Y*_k]|` against the reflected reference.
    pub error: T,
    pub total_variation: T,
    /// `max_k (E[Y^n_k] - r_k)^+`
    pub violation_upper: T,
    /// `max_k (E[Y^n_k] - l_k)^-`
    pub violation_lower: T,
    /// `n^2 sum_k ((E[Y^n_k] - r_k)^+)^2 dt_k`
    pub bounded_upper: T,
    /// `n^2 sum_k ((E[Y^n_k] - l_k)^-)^2 dt_k`
    pub bounded_lower: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltySweep<T> {
    pub rows: Vec<SweepRow<T>>,
    pub reference_mean: Vec<T>,
    /// Log-log fit of `error` against `n`; absent when some error is zero.
    pub fit: Option<RateFit<T>>,
    /// Allowance used by the monotonicity flags.
    pub noise_band: T,
    pub error_monotone: bool,
    pub violation_monotone: bool,
}

/// Solves every level in `ns` (concurrently) and compares with the reference.
pub fn penalty_sweep<T: Real>(sc: &Scenario<T>, sampled: &Sampled<T>, ns: &[T]) -> Result<PenaltySweep<T>> {
    if ns.is_empty() || ns.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("penalty levels must be a non-empty increasing list"));
    }
    let obs = obstacles_of(sc, sampled)?;
    let reference = penalty_reference(sc, sampled)?;
    let sols: Vec<PenaltySolution<T>> =
        ns.par_iter().map(|&n| solve_penalized(sc, sampled, n)).collect::<Result<_>>()?;
    let grid = sampled.bm.grid();
    let rows: Vec<SweepRow<T>> = sols
        .iter()
        .map(|s| {
            let mut row = SweepRow {
                n: s.n,
                error: T::zero(),
                total_variation: crate::skorokhod::total_variation(&s.k),
                violation_upper: T::zero(),
                violation_lower: T::zero(),
                bounded_upper: T::zero(),
                bounded_lower: T::zero(),
            };
            for (k, &m) in s.mean_y.iter().enumerate() {
                let t = grid.time(k);
                row.error = row.error.max((m - reference.mean_y[k]).abs());
                let over = positive_part(m - obs.upper(t));
                let under = positive_part(obs.lower(t) - m);
                row.violation_upper = row.violation_upper.max(over);
                row.violation_lower = row.violation_lower.max(under);
                if k < grid.steps() {
                    let w = s.n * s.n * grid.dt(k);
                    row.bounded_upper = row.bounded_upper + w * over * over;
                    row.bounded_lower = row.bounded_lower + w * under * under;
                }
            }
            row
        })
        .collect();
    let noise_band = stats::stat_tol(&sampled.terminal, sc.config.stat_sigmas);
    let errors: Vec<T> = rows.iter().map(|r| r.error).collect();
    let fit = if errors.iter().all(|e| *e > T::zero()) && rows.len() >= 2 { Some(rate_fit(ns, &errors)?) } else { None };
    let error_monotone = rows.windows(2).all(|w| w[1].error <= w[0].error + noise_band);
    let violation_monotone = rows.windows(2).all(|w| {
        w[1].violation_upper <= w[0].violation_upper + noise_band
            && w[1].violation_lower <= w[0].violation_lower + noise_band
    });
    Ok(PenaltySweep { rows, reference_mean: reference.mean_y, fit, noise_band, error_monotone, violation_monotone })
}
