use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;
use crate::stats;

use super::{LossFn, LossPair};

/// A scalar function of time given by samples on a uniform partition of
/// `[start, end]`, linear in between and constant outside. A single sample
/// is a constant function.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    start: T,
    end: T,
    values: Vec<T>,
    /// `cumulative[j]` = integral from `start` to the `j`-th sample time.
    cumulative: Vec<T>,
}

impl<T: Real> TimeSeries<T> {
    pub fn constant(value: T) -> Self {
        Self {
            start: T::zero(),
            end: T::zero(),
            values: vec![value],
            cumulative: vec![T::zero()],
        }
    }

    pub fn sampled(start: T, end: T, values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("time series needs at least one sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("time series samples must be finite"));
        }
        if values.len() > 1 && !(end > start) {
            return Err(Error::invalid("time series needs start < end"));
        }
        let mut cumulative = vec![T::zero(); values.len()];
        if values.len() > 1 {
            let h = (end - start) / T::from_count(values.len() - 1);
            for j in 1..values.len() {
                cumulative[j] = cumulative[j - 1] + h * (values[j - 1] + values[j]) * T::lit(0.5);
            }
        }
        Ok(Self { start, end, values, cumulative })
    }

    /// Samples `f` at every node of `grid`; valid for uniform grids.
    pub fn from_grid(grid: &TimeGrid<T>, f: impl Fn(T) -> T) -> Result<Self> {
        Self::sampled(grid.start(), grid.horizon(), grid.nodes().iter().map(|&t| f(t)).collect())
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn locate(&self, t: T) -> (usize, T, T) {
        let n = self.values.len() - 1;
        let h = (self.end - self.start) / T::from_count(n);
        let u = ((t - self.start) / h).max(T::zero());
        let j = u.floor().to_usize().unwrap_or(n).min(n - 1);
        (j, (t - self.start) - h * T::from_count(j), h)
    }

    pub fn eval(&self, t: T) -> T {
        if self.values.len() == 1 || t <= self.start {
            return self.values[0];
        }
        if t >= self.end {
            return *self.values.last().unwrap();
        }
        let (j, off, h) = self.locate(t);
        let w = off / h;
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }

    /// Integral of the series from `from` to `t`.
    pub fn integral(&self, from: T, t: T) -> T {
        self.antiderivative(t) - self.antiderivative(from)
    }

    fn antiderivative(&self, t: T) -> T {
        if self.values.len() == 1 {
            return self.values[0] * t;
        }
        let v0 = self.values[0];
        if t <= self.start {
            return v0 * (t - self.start);
        }
        if t >= self.end {
            let last = *self.values.last().unwrap();
            return *self.cumulative.last().unwrap() + last * (t - self.end);
        }
        let (j, off, _) = self.locate(t);
        let vt = self.eval(t);
        self.cumulative[j] + off * (self.values[j] + vt) * T::lit(0.5)
    }
}

/// Ordering of a loss pair against the affine envelope `L' = b x - p`,
/// `R' = b x - q`, evaluated on a sample set.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EnvelopeOrdering<T> {
    /// `max (L - L')`; non-positive when `L <= L'`.
    pub lower_excess: T,
    /// `max (R' - R)`; non-positive when `R >= R'`.
    pub upper_excess: T,
}

impl<T: Real> EnvelopeOrdering<T> {
    pub fn holds(&self, tol: T) -> bool {
        self.lower_excess <= tol && self.upper_excess <= tol
    }
}

/// Affine envelope `L'(t,x) = b_t x - p_t`, `R'(t,x) = b_t x - q_t` with
/// `b > 0` and `p - q` bounded away from zero. Its mean-level band is
/// `[q/b, p/b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEnvelope<T> {
    pub b: TimeSeries<T>,
    pub p: TimeSeries<T>,
    pub q: TimeSeries<T>,
}

impl<T: Real> LinearEnvelope<T> {
    /// Checks `b > 0` and `p > q` at every node of `grid`.
    pub fn new(b: TimeSeries<T>, p: TimeSeries<T>, q: TimeSeries<T>, grid: &TimeGrid<T>) -> Result<Self> {
        for &t in grid.nodes() {
            if !(b.eval(t) > T::zero()) {
                return Err(Error::invalid(format!("envelope slope must be positive, b({t}) = {}", b.eval(t))));
            }
            if !(p.eval(t) > q.eval(t)) {
                return Err(Error::invalid(format!("envelope needs p > q, violated at t = {t}")));
            }
        }
        Ok(Self { b, p, q })
    }

    pub fn constant(b: T, p: T, q: T, grid: &TimeGrid<T>) -> Result<Self> {
        Self::new(TimeSeries::constant(b), TimeSeries::constant(p), TimeSeries::constant(q), grid)
    }

    /// `(q/b, p/b)` at time `t`.
    pub fn band_at(&self, t: T) -> (T, T) {
        let b = self.b.eval(t);
        (self.q.eval(t) / b, self.p.eval(t) / b)
    }

    /// Discrete total variations of `p/b` and `q/b` over the nodes of `grid`.
    pub fn ratio_variations(&self, grid: &TimeGrid<T>) -> (T, T) {
        let pb: Vec<T> = grid.nodes().iter().map(|&t| self.p.eval(t) / self.b.eval(t)).collect();
        let qb: Vec<T> = grid.nodes().iter().map(|&t| self.q.eval(t) / self.b.eval(t)).collect();
        (stats::variation(&pb), stats::variation(&qb))
    }

    pub fn loss_pair(&self) -> LossPair<T> {
        let lo = self.b.values().iter().copied().fold(T::infinity(), T::min);
        let hi = self.b.values().iter().copied().fold(T::zero(), T::max);
        LossPair {
            lower: LossFn::Affine { b: self.b.clone(), offset: self.p.clone() },
            upper: LossFn::Affine { b: self.b.clone(), offset: self.q.clone() },
            c: lo,
            big_c: hi,
            gap: T::zero(),
        }
    }

    /// Evaluates `L <= L'` and `R >= R'` for `lp` on the sample set.
    pub fn ordering(&self, lp: &LossPair<T>, t_samples: &[T], x_samples: &[T]) -> EnvelopeOrdering<T> {
        let mut lower_excess = T::neg_infinity();
        let mut upper_excess = T::neg_infinity();
        for &t in t_samples {
            let (b, p, q) = (self.b.eval(t), self.p.eval(t), self.q.eval(t));
            for &x in x_samples {
                lower_excess = lower_excess.max(lp.lower_at(t, x) - (b * x - p));
                upper_excess = upper_excess.max((b * x - q) - lp.upper_at(t, x));
            }
        }
        EnvelopeOrdering { lower_excess, upper_excess }
    }
}

/// Deterministic obstacles `l_t = l_0 + int_0^t lower_rate`,
/// `r_t = r_0 + int_0^t upper_rate` for the mean, i.e. the constraint
/// `l_t <= E[Y_t] <= r_t`. The standard setting pins `l_0 = r_0 = 0`;
/// nonzero starts only serve to build effectively inactive obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObstacles<T> {
    pub lower_rate: TimeSeries<T>,
    pub upper_rate: TimeSeries<T>,
    pub lower_start: T,
    pub upper_start: T,
}

impl<T: Real> LinearObstacles<T> {
    /// Checks `l_t <= r_t` at every node of `grid`.
    pub fn new(lower_rate: TimeSeries<T>, upper_rate: TimeSeries<T>, grid: &TimeGrid<T>) -> Result<Self> {
        Self::with_starts(lower_rate, upper_rate, T::zero(), T::zero(), grid)
    }

    pub fn with_starts(
        lower_rate: TimeSeries<T>,
        upper_rate: TimeSeries<T>,
        lower_start: T,
        upper_start: T,
        grid: &TimeGrid<T>,
    ) -> Result<Self> {
        let obs = Self { lower_rate, upper_rate, lower_start, upper_start };
        for &t in grid.nodes() {
            if obs.lower(t) > obs.upper(t) {
                return Err(Error::invalid(format!("obstacles cross at t = {t}: l > r")));
            }
        }
        Ok(obs)
    }

    pub fn constant_rates(lower_rate: T, upper_rate: T, grid: &TimeGrid<T>) -> Result<Self> {
        Self::new(TimeSeries::constant(lower_rate), TimeSeries::constant(upper_rate), grid)
    }

    pub fn lower(&self, t: T) -> T {
        self.lower_start + self.lower_rate.integral(T::zero(), t)
    }

    pub fn upper(&self, t: T) -> T {
        self.upper_start + self.upper_rate.integral(T::zero(), t)
    }

    /// Loss pair `L = x - r_t`, `R = x - l_t`; the gap is zero since both
    /// obstacles may start at the origin.
    pub fn loss_pair(&self) -> LossPair<T> {
        let up = self.clone();
        let lo = self.clone();
        LossPair {
            lower: LossFn::custom_affine(move |t, x| x - up.upper(t)),
            upper: LossFn::custom_affine(move |t, x| x - lo.lower(t)),
            c: T::one(),
            big_c: T::one(),
            gap: T::zero(),
        }
    }
}
