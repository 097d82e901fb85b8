//! Loss functions and the mean-level boundaries built from them.

mod boundary;
mod envelope;

use std::fmt;
use std::sync::Arc;

pub use boundary::{
    find_increasing_root, invert_boundary, make_mean_boundary, Band, ConstantBand, Edge, FnBoundary,
    MeanBoundary, MovingBand, NodeBoundary, Reversed,
};
pub use envelope::{EnvelopeOrdering, LinearEnvelope, LinearObstacles, TimeSeries};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type LossEval<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// A constraint function `(t, x) -> value`, increasing in `x`.
#[derive(Clone)]
pub enum LossFn<T> {
    /// `slope * x + intercept`
    Linear { slope: T, intercept: T },
    /// `-x^2 / (2(1+|x|)) + x - 4`
    BentLower,
    /// `x^2 / (2(1+|x|)) + x + 1`
    BentUpper,
    /// `b_t * x - offset_t`
    Affine { b: TimeSeries<T>, offset: TimeSeries<T> },
    /// Arbitrary evaluator. Set `affine` when it is affine in `x` for every
    /// fixed `t`; boundaries then average it in closed form.
    Custom { eval: LossEval<T>, affine: bool },
}

impl<T: Real> LossFn<T> {
    pub fn linear(slope: T, intercept: T) -> Self {
        LossFn::Linear { slope, intercept }
    }

    pub fn custom(eval: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        LossFn::Custom { eval: Arc::new(eval), affine: false }
    }

    pub fn custom_affine(eval: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        LossFn::Custom { eval: Arc::new(eval), affine: true }
    }

    #[inline]
    pub fn eval(&self, t: T, x: T) -> T {
        match self {
            LossFn::Linear { slope, intercept } => *slope * x + *intercept,
            LossFn::BentLower => {
                -T::lit(0.5) * x * x / (T::one() + x.abs()) + x - T::lit(4.0)
            }
            LossFn::BentUpper => {
                T::lit(0.5) * x * x / (T::one() + x.abs()) + x + T::one()
            }
            LossFn::Affine { b, offset } => b.eval(t) * x - offset.eval(t),
            LossFn::Custom { eval, .. } => eval(t, x),
        }
    }

    /// `(a, b)` with `loss(t, x) = a x + b`, when the loss is affine in `x`.
    pub fn affine_at(&self, t: T) -> Option<(T, T)> {
        match self {
            LossFn::Linear { slope, intercept } => Some((*slope, *intercept)),
            LossFn::Affine { b, offset } => Some((b.eval(t), -offset.eval(t))),
            LossFn::Custom { eval, affine: true } => {
                let at0 = eval(t, T::zero());
                Some((eval(t, T::one()) - at0, at0))
            }
            _ => None,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for LossFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossFn::Linear { slope, intercept } => f
                .debug_struct("Linear")
                .field("slope", slope)
                .field("intercept", intercept)
                .finish(),
            LossFn::BentLower => f.write_str("BentLower"),
            LossFn::BentUpper => f.write_str("BentUpper"),
            LossFn::Affine { b, offset } => {
                f.debug_struct("Affine").field("b", b).field("offset", offset).finish()
            }
            LossFn::Custom { affine, .. } => {
                f.debug_struct("Custom").field("affine", affine).finish_non_exhaustive()
            }
        }
    }
}

/// Lower and upper loss functions with their declared bi-Lipschitz
/// constants `c <= C` and gap `inf (R - L) >= gap`.
///
/// The mean constraint reads `E[L(t, Y_t)] <= 0 <= E[R(t, Y_t)]`.
#[derive(Debug, Clone)]
pub struct LossPair<T> {
    pub lower: LossFn<T>,
    pub upper: LossFn<T>,
    pub c: T,
    pub big_c: T,
    pub gap: T,
}

impl<T: Real> LossPair<T> {
    pub fn new(lower: LossFn<T>, upper: LossFn<T>, c: T, big_c: T, gap: T) -> Result<Self> {
        if !(c > T::zero()) || !(big_c >= c) || !big_c.is_finite() {
            return Err(Error::invalid(format!(
                "bi-Lipschitz constants must satisfy 0 < c <= C, got c={c}, C={big_c}"
            )));
        }
        if !(gap >= T::zero()) {
            return Err(Error::invalid(format!("declared gap must be non-negative, got {gap}")));
        }
        Ok(Self { lower, upper, c, big_c, gap })
    }

    /// `L = x - hi`, `R = x - lo`: the constraint `lo <= E[Y] <= hi`.
    pub fn band(lo: T, hi: T) -> Result<Self> {
        Self::new(
            LossFn::linear(T::one(), -hi),
            LossFn::linear(T::one(), -lo),
            T::one(),
            T::one(),
            (hi - lo).max(T::zero()),
        )
    }

    /// `L(t,x) = x - 4`, `R(t,x) = x + 1`.
    pub fn linear_example() -> Self {
        Self::band(-T::one(), T::lit(4.0)).expect("valid constants")
    }

    /// The quadratic-perturbed pair; slopes of `L` lie in `(1/2, 1]` and of
    /// `R` in `[1, 3/2)`, and `R - L = x^2/(1+|x|) + 5 >= 5`.
    pub fn bent_example() -> Self {
        Self::new(
            LossFn::BentLower,
            LossFn::BentUpper,
            T::lit(0.5),
            T::lit(1.5),
            T::lit(5.0),
        )
        .expect("valid constants")
    }

    pub fn lower_at(&self, t: T, x: T) -> T {
        self.lower.eval(t, x)
    }

    pub fn upper_at(&self, t: T, x: T) -> T {
        self.upper.eval(t, x)
    }
}

/// Empirical check of the loss-pair assumptions on a sample set.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LossValidation<T> {
    pub monotonicity_violations: usize,
    /// Smallest observed difference quotient of either loss.
    pub observed_c: T,
    /// Largest observed difference quotient of either loss.
    pub observed_big_c: T,
    pub min_gap: T,
    pub passes: bool,
}

/// Spot-tests monotonicity, the bi-Lipschitz bounds and the gap of `lp` on
/// every `t` in `t_samples` and consecutive pairs of sorted `x_samples`.
pub fn validate_loss<T: Real>(lp: &LossPair<T>, t_samples: &[T], x_samples: &[T]) -> LossValidation<T> {
    let mut xs = x_samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    xs.dedup();

    let mut violations = 0;
    let mut lo_slope = T::infinity();
    let mut hi_slope = T::neg_infinity();
    let mut min_gap = T::infinity();
    for &t in t_samples {
        for &x in &xs {
            min_gap = min_gap.min(lp.upper_at(t, x) - lp.lower_at(t, x));
        }
        for w in xs.windows(2) {
            let dx = w[1] - w[0];
            for loss in [&lp.lower, &lp.upper] {
                let slope = (loss.eval(t, w[1]) - loss.eval(t, w[0])) / dx;
                if !(slope > T::zero()) {
                    violations += 1;
                }
                lo_slope = lo_slope.min(slope);
                hi_slope = hi_slope.max(slope);
            }
        }
    }
    let rel = T::lit(1e-9);
    let passes = violations == 0
        && lo_slope >= lp.c * (T::one() - rel)
        && hi_slope <= lp.big_c * (T::one() + rel)
        && min_gap >= lp.gap - rel * (T::one() + lp.gap.abs());
    LossValidation {
        monotonicity_violations: violations,
        observed_c: lo_slope,
        observed_big_c: hi_slope,
        min_gap,
        passes,
    }
}
