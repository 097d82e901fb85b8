//! Read-only checks on solutions and traces.

use serde::Serialize;

use crate::constraints::LossPair;
use crate::error::{Error, Result};
use crate::grid::Ensemble;
use crate::mrbsde::{MRSolution, PicardTrace};
use crate::scalar::Real;
use crate::stats;

pub use crate::stats::stat_tol;

/// Worst mean-constraint violations over the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationReport<T> {
    /// `max_k (E_N[L(t_k, Y_k)])^+`
    pub lower: T,
    /// `max_k (-E_N[R(t_k, Y_k)])^+`
    pub upper: T,
    /// `max_k` of the statistical tolerances of both means.
    pub stat_tol: T,
}

impl<T: Real> ViolationReport<T> {
    pub fn within(&self, tol: T) -> bool {
        self.lower <= tol && self.upper <= tol
    }
}

pub fn constraint_violation<T: Real>(y: &Ensemble<T>, lp: &LossPair<T>, sigmas: T) -> ViolationReport<T> {
    let n = y.particles();
    let mut lower = T::zero();
    let mut upper = T::zero();
    let mut tol = T::zero();
    for k in 0..y.nodes() {
        let t = y.grid().time(k);
        let ys = y.cross_section(k);
        let l: Vec<T> = ys.iter().map(|v| lp.lower_at(t, *v)).collect();
        let r: Vec<T> = ys.iter().map(|v| lp.upper_at(t, *v)).collect();
        lower = lower.max(stats::mean(&l));
        upper = upper.max(-stats::mean(&r));
        tol = tol.max(stat_tol(&l, sigmas)).max(stat_tol(&r, sigmas));
        debug_assert_eq!(l.len(), n);
    }
    ViolationReport { lower, upper, stat_tol: tol }
}

/// `max |Y - (inner_y + K_T - K_t)|` over nodes and particles.
pub fn representation_error<T: Real>(sol: &MRSolution<T>) -> T {
    let k_t = sol.k.last();
    let mut worst = T::zero();
    for k in 0..sol.y.nodes() {
        let shift = k_t - sol.k.values()[k];
        for (y, inner) in sol.y.cross_section(k).iter().zip(sol.inner_y.cross_section(k)) {
            worst = worst.max((*y - (*inner + shift)).abs());
        }
    }
    worst
}

/// Joint acceptance audit of a mean-reflected solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionAudit<T> {
    pub violation: ViolationReport<T>,
    pub flat_residual_up: T,
    pub flat_residual_down: T,
    pub flat_tol: T,
    pub representation_error: T,
    pub total_variation: T,
    pub accepted: bool,
}

pub fn audit_solution<T: Real>(sol: &MRSolution<T>, lp: &LossPair<T>, sigmas: T) -> SolutionAudit<T> {
    let violation = constraint_violation(&sol.y, lp, sigmas);
    let representation_error = representation_error(sol);
    let accepted = violation.within(violation.stat_tol.max(sol.anchor_tol)) && sol.flat_ok();
    SolutionAudit {
        violation,
        flat_residual_up: sol.flat_residual_up,
        flat_residual_down: sol.flat_residual_down,
        flat_tol: sol.flat_tol,
        representation_error,
        total_variation: sol.total_variation(),
        accepted,
    }
}

/// Ratios `d_{m+1}/d_m` and a geometric fit `d_m ~ A rho^m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport<T> {
    pub ratios: Vec<T>,
    /// Fitted `rho`, when at least two distances are positive.
    pub fitted_rate: Option<T>,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: Option<T>,
    pub contracting: bool,
}

/// A zero distance after a zero distance counts as ratio 0.
pub fn contraction_estimate<T: Real>(distances: &[T]) -> ContractionReport<T> {
    let ratios: Vec<T> = distances
        .windows(2)
        .map(|w| if w[0] > T::zero() { w[1] / w[0] } else { T::zero() })
        .collect();
    let pts: Vec<(T, T)> = distances
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > T::zero())
        .map(|(i, d)| (T::from_count(i), d.ln()))
        .collect();
    let (fitted_rate, r_squared) = match ols(&pts) {
        Some(fit) => (Some(fit.slope.exp()), Some(fit.r_squared)),
        None => (None, None),
    };
    let contracting = match fitted_rate {
        Some(rho) => rho < T::one() && ratios.iter().skip(1).all(|r| *r < T::one()),
        None => ratios.iter().all(|r| *r < T::one()),
    };
    ContractionReport { ratios, fitted_rate, r_squared, contracting }
}

/// Contraction report of the windows kept in a Picard solve.
pub fn trace_contraction<T: Real>(trace: &PicardTrace<T>) -> ContractionReport<T> {
    let d: Vec<T> = trace.accepted_records().iter().map(|r| r.distance).collect();
    contraction_estimate(&d)
}

/// Ordinary least squares fit of `log err` on `log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Root-mean-square residual in log space.
    pub residual: T,
    /// Standard error of the slope (zero for two points).
    pub slope_se: T,
    pub r_squared: T,
}

pub fn rate_fit<T: Real>(xs: &[T], errs: &[T]) -> Result<RateFit<T>> {
    if xs.len() != errs.len() || xs.len() < 2 {
        return Err(Error::invalid("rate fit needs at least two paired points"));
    }
    if xs.iter().chain(errs).any(|v| !(*v > T::zero()) || !v.is_finite()) {
        return Err(Error::invalid("rate fit needs positive finite inputs"));
    }
    let pts: Vec<(T, T)> = xs.iter().zip(errs).map(|(x, e)| (x.ln(), e.ln())).collect();
    ols(&pts).ok_or_else(|| Error::invalid("rate fit needs at least two distinct abscissae"))
}

fn ols<T: Real>(pts: &[(T, T)]) -> Option<RateFit<T>> {
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = T::from_count(n);
    let mx = pts.iter().fold(T::zero(), |a, p| a + p.0) / nf;
    let my = pts.iter().fold(T::zero(), |a, p| a + p.1) / nf;
    let sxx = pts.iter().fold(T::zero(), |a, p| a + (p.0 - mx) * (p.0 - mx));
    if !(sxx > T::zero()) {
        return None;
    }
    let sxy = pts.iter().fold(T::zero(), |a, p| a + (p.0 - mx) * (p.1 - my));
    let syy = pts.iter().fold(T::zero(), |a, p| a + (p.1 - my) * (p.1 - my));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = pts.iter().fold(T::zero(), |a, p| {
        let r = p.1 - (intercept + slope * p.0);
        a + r * r
    });
    let residual = (sse / nf).sqrt();
    let slope_se = if n > 2 { (sse / T::from_count(n - 2) / sxx).sqrt() } else { T::zero() };
    let r_squared = if syy > T::zero() { T::one() - sse / syy } else { T::one() };
    Some(RateFit { slope, intercept, residual, slope_se, r_squared })
}
