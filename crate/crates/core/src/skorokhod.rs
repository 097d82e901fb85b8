//! Discrete forward and backward Skorokhod maps with nonlinear constraints.
//!
//! At every node the constraint `l(t, x) <= 0 <= r(t, x)` is equivalent to
//! `x` lying in the band `[lo, hi]` between the roots of `r` and `l`, so the
//! forward map is the clamp recursion
//! `x_{k+1} = clamp(x_k + s_{k+1} - s_k, lo_{k+1}, hi_{k+1})`, i.e. the exact
//! reflection of the piecewise-constant input.

use std::sync::Arc;

use crate::constraints::{Band, MovingBand, NodeBoundary, Reversed};
use crate::error::{Error, Result};
use crate::grid::{SamplePath, TimeGrid};
use crate::scalar::{negative_part, positive_part, Real};
use crate::stats;

/// Numerical settings of the reflection maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionConfig<T> {
    /// Absolute tolerance of the band-edge roots.
    pub root_tol: T,
    /// Bands narrower than this are rejected as degenerate.
    pub band_min: T,
}

impl<T: Real> Default for ReflectionConfig<T> {
    fn default() -> Self {
        Self { root_tol: T::default_root_tol(), band_min: T::lit(1e-9) }
    }
}

/// Default flatness tolerance `1e-10 (1 + sup|s|)`.
pub fn default_flat_tol<T: Real>(s: &SamplePath<T>) -> T {
    T::lit(1e-10) * (T::one() + s.sup_abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Reflected path `x`, deterministic force `K = push_up - push_down` and
/// the flatness residuals of the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSolution<T> {
    pub x: SamplePath<T>,
    pub k: SamplePath<T>,
    /// Nondecreasing part acting at the lower band edge (root of `r`).
    pub push_up: SamplePath<T>,
    /// Nondecreasing part acting at the upper band edge (root of `l`).
    pub push_down: SamplePath<T>,
    /// Band used at every node.
    pub bands: Vec<Band<T>>,
    pub flat_residual_up: T,
    pub flat_residual_down: T,
    pub flat_tol: T,
    pub direction: Direction,
}

impl<T: Real> ReflectionSolution<T> {
    pub fn flat_ok(&self) -> bool {
        self.flat_residual_up <= self.flat_tol && self.flat_residual_down <= self.flat_tol
    }

    pub fn total_variation(&self) -> T {
        total_variation(&self.k)
    }
}

/// Solution of the backward problem `x_t = a + s_T - s_t + K_T - K_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardReflectionSolution<T> {
    pub anchor: T,
    pub reflection: ReflectionSolution<T>,
}

impl<T: Real> std::ops::Deref for BackwardReflectionSolution<T> {
    type Target = ReflectionSolution<T>;
    fn deref(&self) -> &Self::Target {
        &self.reflection
    }
}

fn check_alignment<T: Real, B: NodeBoundary<T> + ?Sized>(s: &SamplePath<T>, bp: &B) -> Result<()> {
    if bp.node_count() != s.len() {
        return Err(Error::invalid(format!(
            "boundary has {} nodes but input has {}",
            bp.node_count(),
            s.len()
        )));
    }
    if s.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input path must be finite"));
    }
    Ok(())
}

fn compute_bands<T: Real, B: NodeBoundary<T> + ?Sized>(bp: &B, cfg: &ReflectionConfig<T>) -> Result<Vec<Band<T>>> {
    (0..bp.node_count())
        .map(|k| {
            let band = bp.band(k, cfg.root_tol)?;
            if !(band.width() >= cfg.band_min) {
                return Err(Error::DegenerateConstraints {
                    node: k,
                    width: band.width().as_f64(),
                    min_width: cfg.band_min.as_f64(),
                });
            }
            Ok(band)
        })
        .collect()
}

struct Clamped<T> {
    x: Vec<T>,
    up: Vec<T>,
    down: Vec<T>,
}

fn clamp_recursion<T: Real>(s: &[T], bands: &[Band<T>]) -> Clamped<T> {
    let m = s.len();
    let mut x = Vec::with_capacity(m);
    let mut up = Vec::with_capacity(m);
    let mut down = Vec::with_capacity(m);
    let (mut pu, mut pd) = (positive_part(bands[0].lo - s[0]), positive_part(s[0] - bands[0].hi));
    let mut xk = bands[0].clamp(s[0]);
    x.push(xk);
    up.push(pu);
    down.push(pd);
    for k in 1..m {
        let y = xk + (s[k] - s[k - 1]);
        let b = bands[k];
        if y < b.lo {
            pu = pu + (b.lo - y);
            xk = b.lo;
        } else if y > b.hi {
            pd = pd + (y - b.hi);
            xk = b.hi;
        } else {
            xk = y;
        }
        x.push(xk);
        up.push(pu);
        down.push(pd);
    }
    Clamped { x, up, down }
}

fn assemble<T: Real>(
    grid: &Arc<TimeGrid<T>>,
    c: Clamped<T>,
    bands: Vec<Band<T>>,
    flat_tol: T,
    direction: Direction,
) -> ReflectionSolution<T> {
    let k: Vec<T> = c.up.iter().zip(&c.down).map(|(u, d)| *u - *d).collect();
    let path = |v: Vec<T>| SamplePath::new(grid.clone(), v).expect("aligned");
    ReflectionSolution {
        x: path(c.x),
        k: path(k),
        push_up: path(c.up),
        push_down: path(c.down),
        bands,
        flat_residual_up: T::zero(),
        flat_residual_down: T::zero(),
        flat_tol,
        direction,
    }
}

/// Forward Skorokhod map with default settings.
pub fn solve_sp<T: Real, B: NodeBoundary<T> + ?Sized>(s: &SamplePath<T>, bp: &B) -> Result<ReflectionSolution<T>> {
    solve_sp_with(s, bp, &ReflectionConfig::default())
}

/// Forward Skorokhod map. If `s_0` lies outside the initial band the jump
/// into the band is charged to `K` at node 0.
pub fn solve_sp_with<T: Real, B: NodeBoundary<T> + ?Sized>(
    s: &SamplePath<T>,
    bp: &B,
    cfg: &ReflectionConfig<T>,
) -> Result<ReflectionSolution<T>> {
    check_alignment(s, bp)?;
    let bands = compute_bands(bp, cfg)?;
    let clamped = clamp_recursion(s.values(), &bands);
    let mut sol = assemble(s.grid(), clamped, bands, default_flat_tol(s), Direction::Forward);
    let (up, down) = flatness_residuals(&sol, bp);
    sol.flat_residual_up = up;
    sol.flat_residual_down = down;
    Ok(sol)
}

/// Reversed input `s̄_k = a + s_M - s_{M-k}`.
pub fn reverse_input<T: Real>(s: &SamplePath<T>, a: T) -> SamplePath<T> {
    let v = s.values();
    let m = v.len() - 1;
    // grouped so that node 0 is exactly `a`
    let rev = (0..=m).map(|k| a + (v[m] - v[m - k])).collect();
    let grid = reversed_grid(s.grid());
    SamplePath::new(grid, rev).expect("aligned")
}

fn reversed_grid<T: Real>(g: &Arc<TimeGrid<T>>) -> Arc<TimeGrid<T>> {
    let (start, end) = (g.start(), g.horizon());
    let nodes = g.nodes().iter().rev().map(|&t| start + end - t).collect();
    Arc::new(TimeGrid::from_nodes(nodes).expect("reversal preserves ordering"))
}

/// Checks `l(T, a) <= tol` and `r(T, a) >= -tol`.
pub fn check_anchor<T: Real, B: NodeBoundary<T> + ?Sized>(bp: &B, a: T, tol: T) -> Result<()> {
    let m = bp.node_count() - 1;
    let (lower, upper) = (bp.l(m, a), bp.r(m, a));
    if !(lower <= tol && upper >= -tol) {
        return Err(Error::InfeasibleTerminal { lower: lower.as_f64(), upper: upper.as_f64(), tol: tol.as_f64() });
    }
    Ok(())
}

/// Backward Skorokhod map with default settings and anchor tolerance
/// equal to the root tolerance.
pub fn solve_bsp<T: Real, B: NodeBoundary<T> + ?Sized>(
    s: &SamplePath<T>,
    a: T,
    bp: &B,
) -> Result<BackwardReflectionSolution<T>> {
    let cfg = ReflectionConfig::default();
    solve_bsp_with(s, a, bp, &cfg, cfg.root_tol)
}

/// Backward Skorokhod map via time reversal. The reversed band at its first
/// node is widened to contain `a`, so an anchor accepted within
/// `anchor_tol` carries no initial force and `x_M = a` exactly.
pub fn solve_bsp_with<T: Real, B: NodeBoundary<T> + ?Sized>(
    s: &SamplePath<T>,
    a: T,
    bp: &B,
    cfg: &ReflectionConfig<T>,
    anchor_tol: T,
) -> Result<BackwardReflectionSolution<T>> {
    check_alignment(s, bp)?;
    check_anchor(bp, a, anchor_tol)?;
    let rev_bp = Reversed::new(bp);
    let mut rev_bands = compute_bands(&rev_bp, cfg)?;
    rev_bands[0].lo = rev_bands[0].lo.min(a);
    rev_bands[0].hi = rev_bands[0].hi.max(a);
    let s_bar = reverse_input(s, a);
    let c = clamp_recursion(s_bar.values(), &rev_bands);

    let m = s.len() - 1;
    let (up_m, down_m) = (c.up[m], c.down[m]);
    let x = (0..=m).map(|k| c.x[m - k]).collect();
    let up = (0..=m).map(|k| up_m - c.up[m - k]).collect();
    let down = (0..=m).map(|k| down_m - c.down[m - k]).collect();
    let bands = rev_bands.into_iter().rev().collect();
    let mut reflection = assemble(s.grid(), Clamped { x, up, down }, bands, default_flat_tol(s), Direction::Backward);
    let (fu, fd) = flatness_residuals(&reflection, bp);
    reflection.flat_residual_up = fu;
    reflection.flat_residual_down = fd;
    Ok(BackwardReflectionSolution { anchor: a, reflection })
}

/// Forward solve of the reversed data of a backward problem, with the same
/// anchor widening as [`solve_bsp_with`]. Used to audit the reversal.
pub fn solve_reversed<T: Real, B: NodeBoundary<T> + ?Sized>(
    s: &SamplePath<T>,
    a: T,
    bp: &B,
    cfg: &ReflectionConfig<T>,
) -> Result<ReflectionSolution<T>> {
    check_alignment(s, bp)?;
    let rev_bp = Reversed::new(bp);
    let mut bands = compute_bands(&rev_bp, cfg)?;
    bands[0].lo = bands[0].lo.min(a);
    bands[0].hi = bands[0].hi.max(a);
    let lo = bands.iter().map(|b| b.lo).collect();
    let hi = bands.iter().map(|b| b.hi).collect();
    let s_bar = reverse_input(s, a);
    let moving = MovingBand::new(s_bar.grid().nodes().to_vec(), lo, hi)?;
    solve_sp_with(&s_bar, &moving, cfg)
}

/// `(up, down)` flatness residuals
/// `sum max(r(t_k, x_k), 0) dpush_up_k` and `sum max(-l(t_k, x_k), 0) dpush_down_k`.
///
/// Forward solutions attribute the increment into node `k` to `x_k`; backward
/// solutions attribute the increment over `(k, k+1)` to `x_k`.
pub fn flatness_residuals<T: Real, B: NodeBoundary<T> + ?Sized>(sol: &ReflectionSolution<T>, bp: &B) -> (T, T) {
    let x = sol.x.values();
    let up = sol.push_up.values();
    let down = sol.push_down.values();
    let m = x.len();
    let mut ru = T::zero();
    let mut rd = T::zero();
    for k in 0..m {
        let (du, dd) = match sol.direction {
            Direction::Forward if k == 0 => (up[0], down[0]),
            Direction::Forward => (up[k] - up[k - 1], down[k] - down[k - 1]),
            Direction::Backward if k + 1 == m => (T::zero(), T::zero()),
            Direction::Backward => (up[k + 1] - up[k], down[k + 1] - down[k]),
        };
        if du != T::zero() {
            ru = ru + positive_part(bp.r(k, x[k])) * du.abs();
        }
        if dd != T::zero() {
            rd = rd + negative_part(bp.l(k, x[k])) * dd.abs();
        }
    }
    (ru, rd)
}

/// `|K_0| + sum |K_{k+1} - K_k|`.
pub fn total_variation<T: Real>(k: &SamplePath<T>) -> T {
    k.first().abs() + stats::variation(k.values())
}

/// Both sides of a total-variation estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TvReport<T> {
    pub total_variation: T,
    /// `push_up_T + push_down_T`.
    pub jordan_total: T,
    pub bound: T,
    pub slack: T,
    pub holds: bool,
}

fn tv_report<T: Real>(sol: &ReflectionSolution<T>, bound: T, tv_tol: T) -> TvReport<T> {
    let jordan_total = sol.push_up.last() + sol.push_down.last();
    let slack = bound - jordan_total;
    TvReport { total_variation: sol.total_variation(), jordan_total, bound, slack, holds: slack >= -tv_tol }
}

/// Total variation of a forward solution against
/// `Var(hi - s) + Var(lo - s) + dist(s_0, band_0)`; the last term pays for
/// the initial jump.
pub fn check_tv_bound<T: Real>(sol: &ReflectionSolution<T>, s: &SamplePath<T>, tv_tol: T) -> TvReport<T> {
    let sv = s.values();
    let phi: Vec<T> = sol.bands.iter().zip(sv).map(|(b, s)| b.hi - *s).collect();
    let psi: Vec<T> = sol.bands.iter().zip(sv).map(|(b, s)| b.lo - *s).collect();
    let bound = stats::variation(&phi) + stats::variation(&psi) + sol.bands[0].distance(sv[0]);
    tv_report(sol, bound, tv_tol)
}

/// Total variation of a backward solution against `Var(hi + s) + Var(lo + s)`.
pub fn check_tv_bound_backward<T: Real>(
    sol: &BackwardReflectionSolution<T>,
    s: &SamplePath<T>,
    tv_tol: T,
) -> TvReport<T> {
    let sv = s.values();
    let phi: Vec<T> = sol.bands.iter().zip(sv).map(|(b, s)| b.hi + *s).collect();
    let psi: Vec<T> = sol.bands.iter().zip(sv).map(|(b, s)| b.lo + *s).collect();
    let bound = stats::variation(&phi) + stats::variation(&psi);
    tv_report(sol, bound, tv_tol)
}

/// Both sides of a continuity estimate for two reflection solves.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport<T> {
    pub lhs: T,
    pub rhs: T,
    pub slack: T,
    /// Sampled `sup |l1 - l2|` and `sup |r1 - r2|`.
    pub l_bar: T,
    pub r_bar: T,
    pub holds: bool,
}

/// `max(sup|l1 - l2|, sup|r1 - r2|)` over nodes and the sample set, which is
/// extended by both solutions' band edges so the band-edge gap is always seen.
fn boundary_discrepancy<T: Real, B1, B2>(
    bp1: &B1,
    bp2: &B2,
    bands1: &[Band<T>],
    bands2: &[Band<T>],
    x_samples: &[T],
) -> (T, T)
where
    B1: NodeBoundary<T> + ?Sized,
    B2: NodeBoundary<T> + ?Sized,
{
    let mut l_bar = T::zero();
    let mut r_bar = T::zero();
    for k in 0..bp1.node_count() {
        let edges = [bands1[k].lo, bands1[k].hi, bands2[k].lo, bands2[k].hi];
        for &x in x_samples.iter().chain(edges.iter()) {
            l_bar = l_bar.max((bp1.l(k, x) - bp2.l(k, x)).abs());
            r_bar = r_bar.max((bp1.r(k, x) - bp2.r(k, x)).abs());
        }
    }
    (l_bar, r_bar)
}

/// Forward continuity estimate
/// `sup|K1 - K2| <= (C/c) sup|s1 - s2| + (1/c) max(L̄, R̄)`, with `c` the
/// smaller and `C` the larger of the two boundaries' constants.
#[allow(clippy::too_many_arguments)]
pub fn check_continuity_bound<T, B1, B2>(
    sol1: &ReflectionSolution<T>,
    sol2: &ReflectionSolution<T>,
    s1: &SamplePath<T>,
    s2: &SamplePath<T>,
    bp1: &B1,
    bp2: &B2,
    x_samples: &[T],
    check_tol: T,
) -> ContinuityReport<T>
where
    T: Real,
    B1: NodeBoundary<T> + ?Sized,
    B2: NodeBoundary<T> + ?Sized,
{
    let (c, big_c) = joint_constants(bp1, bp2);
    let (l_bar, r_bar) = boundary_discrepancy(bp1, bp2, &sol1.bands, &sol2.bands, x_samples);
    let lhs = sol1.k.sup_gap(&sol2.k);
    let rhs = big_c / c * s1.sup_gap(s2) + l_bar.max(r_bar) / c;
    let slack = rhs - lhs;
    ContinuityReport { lhs, rhs, slack, l_bar, r_bar, holds: slack >= -check_tol }
}

/// Backward continuity estimate
/// `sup|K1 - K2| <= 2(C/c)|a1 - a2| + 4(C/c) sup|s1 - s2| + (2/c) max(L̄, R̄)`.
#[allow(clippy::too_many_arguments)]
pub fn check_backward_continuity_bound<T, B1, B2>(
    sol1: &BackwardReflectionSolution<T>,
    sol2: &BackwardReflectionSolution<T>,
    s1: &SamplePath<T>,
    s2: &SamplePath<T>,
    bp1: &B1,
    bp2: &B2,
    x_samples: &[T],
    check_tol: T,
) -> ContinuityReport<T>
where
    T: Real,
    B1: NodeBoundary<T> + ?Sized,
    B2: NodeBoundary<T> + ?Sized,
{
    let (c, big_c) = joint_constants(bp1, bp2);
    let (l_bar, r_bar) = boundary_discrepancy(bp1, bp2, &sol1.bands, &sol2.bands, x_samples);
    let lhs = sol1.k.sup_gap(&sol2.k);
    let two = T::lit(2.0);
    let rhs = two * big_c / c * (sol1.anchor - sol2.anchor).abs()
        + T::lit(4.0) * big_c / c * s1.sup_gap(s2)
        + two * l_bar.max(r_bar) / c;
    let slack = rhs - lhs;
    ContinuityReport { lhs, rhs, slack, l_bar, r_bar, holds: slack >= -check_tol }
}

fn joint_constants<T: Real, B1, B2>(bp1: &B1, bp2: &B2) -> (T, T)
where
    B1: NodeBoundary<T> + ?Sized,
    B2: NodeBoundary<T> + ?Sized,
{
    let (c1, cc1) = bp1.slope_bounds();
    let (c2, cc2) = bp2.slope_bounds();
    (c1.min(c2), cc1.max(cc2))
}

/// Jordan-part comparison between a wide and a narrow boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<T> {
    /// `min_k (push_up_narrow - push_up_wide)`.
    pub up_slack: T,
    /// `min_k (push_down_narrow - push_down_wide)`.
    pub down_slack: T,
    /// Whether `l_wide <= l_narrow` and `r_wide >= r_narrow` held on the samples.
    pub ordered: bool,
    pub holds: bool,
}

/// Solves the forward problem for both boundaries and checks that the
/// narrower one accumulates at least as much of each Jordan part.
pub fn check_comparison<T, B1, B2>(
    s: &SamplePath<T>,
    bp_wide: &B1,
    bp_narrow: &B2,
    x_samples: &[T],
    check_tol: T,
) -> Result<ComparisonReport<T>>
where
    T: Real,
    B1: NodeBoundary<T> + ?Sized,
    B2: NodeBoundary<T> + ?Sized,
{
    let mut ordered = true;
    for k in 0..s.len() {
        for &x in x_samples {
            if bp_wide.l(k, x) > bp_narrow.l(k, x) || bp_wide.r(k, x) < bp_narrow.r(k, x) {
                ordered = false;
            }
        }
    }
    let wide = solve_sp(s, bp_wide)?;
    let narrow = solve_sp(s, bp_narrow)?;
    let min_gap = |a: &SamplePath<T>, b: &SamplePath<T>| {
        a.values().iter().zip(b.values()).fold(T::infinity(), |m, (x, y)| m.min(*x - *y))
    };
    let up_slack = min_gap(&narrow.push_up, &wide.push_up);
    let down_slack = min_gap(&narrow.push_down, &wide.push_down);
    Ok(ComparisonReport {
        up_slack,
        down_slack,
        ordered,
        holds: ordered && up_slack >= -check_tol && down_slack >= -check_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstantBand, FnBoundary};

    fn ramp(steps: usize, slope: f64) -> SamplePath<f64> {
        let g = Arc::new(TimeGrid::uniform(1.0, steps).unwrap());
        SamplePath::from_fn(g, move |t| slope * t)
    }

    fn unit_band(n: usize) -> ConstantBand<f64> {
        ConstantBand { nodes: n, lo: -1.0, hi: 1.0 }
    }

    #[test]
    fn flat_input_is_untouched() {
        let s = ramp(10, 0.0);
        let sol = solve_sp(&s, &unit_band(11)).unwrap();
        assert!(sol.x.values().iter().all(|&v| v == 0.0));
        assert!(sol.k.values().iter().all(|&v| v == 0.0));
        assert_eq!(sol.total_variation(), 0.0);
        assert_eq!((sol.flat_residual_up, sol.flat_residual_down), (0.0, 0.0));
    }

    #[test]
    fn upward_ramp_is_clamped_from_above() {
        // grid point 1/2 is a node, so the discrete clamp is exact
        let s = ramp(64, 2.0);
        let sol = solve_sp(&s, &unit_band(65)).unwrap();
        for (k, &t) in s.grid().nodes().iter().enumerate() {
            let over = (2.0 * t - 1.0).max(0.0);
            assert!((sol.x.values()[k] - (2.0 * t).min(1.0)).abs() < 1e-14);
            assert!((sol.push_down.values()[k] - over).abs() < 1e-14);
            assert_eq!(sol.push_up.values()[k], 0.0);
            assert!((sol.k.values()[k] + over).abs() < 1e-14);
        }
        assert!((sol.total_variation() - 1.0).abs() < 1e-14);
        assert!(sol.flat_ok());
        let tv = check_tv_bound(&sol, &s, 1e-12);
        assert!(tv.holds && tv.slack >= 0.0, "{tv:?}");
    }

    #[test]
    fn downward_ramp_is_clamped_from_below() {
        let s = ramp(64, -2.0);
        let sol = solve_sp(&s, &unit_band(65)).unwrap();
        for (k, &t) in s.grid().nodes().iter().enumerate() {
            assert!((sol.x.values()[k] - (-2.0 * t).max(-1.0)).abs() < 1e-14);
            assert!((sol.push_up.values()[k] - (2.0 * t - 1.0).max(0.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_jump_is_charged_at_node_zero() {
        let g = Arc::new(TimeGrid::uniform(1.0, 4).unwrap());
        let s = SamplePath::from_fn(g, |_| 3.0);
        let sol = solve_sp(&s, &unit_band(5)).unwrap();
        assert_eq!(sol.push_down.first(), 2.0);
        assert!(sol.x.values().iter().all(|&v| v == 1.0));
        let tv = check_tv_bound(&sol, &s, 0.0);
        assert_eq!(tv.bound, 2.0);
        assert!(tv.holds);
    }

    #[test]
    fn degenerate_band_is_rejected() {
        let s = ramp(4, 0.0);
        let err = solve_sp(&s, &ConstantBand { nodes: 5, lo: 0.0, hi: 0.0 }).unwrap_err();
        assert_eq!(err.reason(), "degenerate-constraints");
    }

    #[test]
    fn backward_flat_input() {
        let s = ramp(8, 0.0);
        let sol = solve_bsp(&s, 0.0, &unit_band(9)).unwrap();
        assert!(sol.x.values().iter().all(|&v| v == 0.0));
        assert!(sol.k.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_two_barrier_clamp() {
        // band [-1, 2]; x_t = 4(1-t) + K_T - K_t is held at 2 for t <= 1/2
        let s = ramp(64, 4.0);
        let bp = ConstantBand { nodes: 65, lo: -1.0, hi: 2.0 };
        let sol = solve_bsp(&s, 0.0, &bp).unwrap();
        for (k, &t) in s.grid().nodes().iter().enumerate() {
            assert!((sol.k.values()[k] + (4.0 * t).min(2.0)).abs() < 1e-13, "node {k}");
            assert!((sol.x.values()[k] - (4.0 * (1.0 - t)).min(2.0)).abs() < 1e-13);
            let identity = 0.0 + 4.0 - 4.0 * t + sol.k.last() - sol.k.values()[k];
            assert!((sol.x.values()[k] - identity).abs() < 1e-13);
        }
        assert_eq!(sol.push_up.last(), 0.0);
        assert!(sol.flat_ok());
        assert!(check_tv_bound_backward(&sol, &s, 1e-12).holds);
    }

    #[test]
    fn infeasible_anchor_is_rejected() {
        let s = ramp(4, 0.0);
        let err = solve_bsp(&s, 5.0, &unit_band(5)).unwrap_err();
        assert_eq!(err.reason(), "infeasible-terminal");
    }

    #[test]
    fn perturbed_force_has_positive_residual() {
        let s = ramp(16, 0.0);
        let bp = unit_band(17);
        let mut sol = solve_sp(&s, &bp).unwrap();
        let mut up = sol.push_up.values().to_vec();
        for v in up.iter_mut().skip(8) {
            *v += 0.25;
        }
        sol.push_up = SamplePath::new(s.grid().clone(), up).unwrap();
        let (ru, rd) = flatness_residuals(&sol, &bp);
        assert!(ru > 0.0);
        assert_eq!(rd, 0.0);
    }

    #[test]
    fn nonlinear_boundary_residuals_vanish() {
        let g = TimeGrid::uniform(1.0, 200).unwrap();
        let fb = FnBoundary::new(
            &g,
            |t, x: f64| x + 0.4 * x.sin() - 1.0 - 0.5 * t,
            |t, x: f64| x + 0.4 * x.sin() + 1.0 - t,
            0.6,
            1.4,
        );
        let s = SamplePath::from_fn(Arc::new(g), |t| 3.0 * (6.0 * t).sin());
        let sol = solve_sp(&s, &fb).unwrap();
        assert!(sol.push_up.last() > 0.0 && sol.push_down.last() > 0.0);
        assert!(sol.flat_ok(), "{} {}", sol.flat_residual_up, sol.flat_residual_down);
        for k in 0..s.len() {
            assert!(fb.l(k, sol.x.values()[k]) <= 1e-12);
            assert!(fb.r(k, sol.x.values()[k]) >= -1e-12);
        }
    }
}
