use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Ensemble, TimeGrid};
use crate::scalar::Real;
use crate::stats;

use super::LossPair;

/// Feasible interval `[lo, hi]` of a boundary at one node: `lo` is the root
/// of `r`, `hi` the root of `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Band<T> {
    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: T) -> T {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Distance from `x` to the band.
    pub fn distance(&self, x: T) -> T {
        (self.lo - x).max(x - self.hi).max(T::zero())
    }
}

/// Which root of a boundary to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// Root of `l`, the upper edge of the band.
    Upper,
    /// Root of `r`, the lower edge of the band.
    Lower,
}

/// Pair of functions `l(t, x) <= r(t, x)` on the nodes of a grid, each
/// increasing in `x` with difference quotients in `[c, C]`.
pub trait NodeBoundary<T: Real> {
    fn node_count(&self) -> usize;
    fn time(&self, node: usize) -> T;
    fn l(&self, node: usize, x: T) -> T;
    fn r(&self, node: usize, x: T) -> T;
    /// `(c, C)`.
    fn slope_bounds(&self) -> (T, T);

    fn band(&self, node: usize, root_tol: T) -> Result<Band<T>> {
        Ok(Band {
            lo: invert_boundary(self, node, Edge::Lower, root_tol)?,
            hi: invert_boundary(self, node, Edge::Upper, root_tol)?,
        })
    }
}

impl<T: Real, B: NodeBoundary<T> + ?Sized> NodeBoundary<T> for &B {
    fn node_count(&self) -> usize {
        (**self).node_count()
    }
    fn time(&self, node: usize) -> T {
        (**self).time(node)
    }
    fn l(&self, node: usize, x: T) -> T {
        (**self).l(node, x)
    }
    fn r(&self, node: usize, x: T) -> T {
        (**self).r(node, x)
    }
    fn slope_bounds(&self) -> (T, T) {
        (**self).slope_bounds()
    }
    fn band(&self, node: usize, root_tol: T) -> Result<Band<T>> {
        (**self).band(node, root_tol)
    }
}

const MAX_EXPANSIONS: usize = 64;
const MAX_ITERATIONS: usize = 200;

/// Root of an increasing function with slope at least `c`, starting at `x0`.
///
/// The root lies within `|f(x0)|/c` of `x0`; the bracket is widened by
/// doubling if the declared `c` is too optimistic, then refined by Illinois
/// regula falsi with a bisection step whenever two iterations fail to halve
/// the bracket. Returns once `|f| <= tol` or the bracket is a few ulps wide.
pub fn find_increasing_root<T: Real>(f: impl Fn(T) -> T, x0: T, c: T, tol: T) -> Result<T> {
    find_root_sided(f, x0, c, tol, 0)
}

/// As [`find_increasing_root`], but `side > 0` only accepts points with
/// `f >= 0` and `side < 0` only points with `f <= 0`.
fn find_root_sided<T: Real>(f: impl Fn(T) -> T, x0: T, c: T, tol: T, side: i8) -> Result<T> {
    let accept = |fx: T| {
        fx.abs() <= tol && (side == 0 || (side > 0 && fx >= T::zero()) || (side < 0 && fx <= T::zero()))
    };
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::NumericalFailure(format!("boundary not finite at x = {x0}")));
    }
    if accept(f0) {
        return Ok(x0);
    }
    let scale = T::one().max(x0.abs());
    let mut step = f0.abs() / c * T::lit(1.000_001) + scale * T::epsilon() * T::lit(4.0);
    let dir = if f0 > T::zero() { -T::one() } else { T::one() };
    let (mut x1, mut f1);
    let mut expansions = 0;
    loop {
        x1 = x0 + dir * step;
        f1 = f(x1);
        if !f1.is_finite() {
            return Err(Error::NumericalFailure(format!("boundary not finite at x = {x1}")));
        }
        if accept(f1) {
            return Ok(x1);
        }
        if (f1 > T::zero()) != (f0 > T::zero()) {
            break;
        }
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::NumericalFailure(format!(
                "no sign change within {step:e} of {x0}; boundary may not be increasing"
            )));
        }
        step = step * T::lit(2.0);
    }
    // invariant: f(a) <= 0 < f(b) for the true values
    let (mut a, mut fa_true, mut b, mut fb_true) =
        if f0 > T::zero() { (x1, f1, x0, f0) } else { (x0, f0, x1, f1) };
    let (mut fa, mut fb) = (fa_true, fb_true);

    let mut last_side = 0i8;
    let mut widths = [b - a, b - a];
    for it in 0..MAX_ITERATIONS {
        let width = b - a;
        let ulps = T::epsilon() * T::lit(4.0) * T::one().max(a.abs()).max(b.abs());
        if width <= ulps {
            break;
        }
        let bisect = it >= 2 && width > widths[0] * T::lit(0.5);
        let mut x = if bisect { a + width * T::lit(0.5) } else { b - fb * width / (fb - fa) };
        if !(x > a && x < b) {
            x = a + width * T::lit(0.5);
        }
        let fx = f(x);
        if !fx.is_finite() {
            return Err(Error::NumericalFailure(format!("boundary not finite at x = {x}")));
        }
        if accept(fx) {
            return Ok(x);
        }
        if fx <= T::zero() {
            a = x;
            fa = fx;
            fa_true = fx;
            if last_side == -1 {
                fb = fb * T::lit(0.5);
            }
            last_side = -1;
        } else {
            b = x;
            fb = fx;
            fb_true = fx;
            if last_side == 1 {
                fa = fa * T::lit(0.5);
            }
            last_side = 1;
        }
        widths = [widths[1], b - a];
    }
    Ok(match side {
        s if s > 0 => b,
        s if s < 0 => a,
        _ if fa_true.abs() <= fb_true.abs() => a,
        _ => b,
    })
}

/// Root of `l(node, .)` (upper edge) or `r(node, .)` (lower edge).
///
/// The upper edge is returned on the side where `l >= 0` and the lower edge
/// where `r <= 0`, so a path held at an edge never sees a strictly slack
/// constraint there.
pub fn invert_boundary<T: Real, B: NodeBoundary<T> + ?Sized>(
    bp: &B,
    node: usize,
    which: Edge,
    root_tol: T,
) -> Result<T> {
    let (c, _) = bp.slope_bounds();
    match which {
        Edge::Upper => find_root_sided(|x| bp.l(node, x), T::zero(), c, root_tol, 1),
        Edge::Lower => find_root_sided(|x| bp.r(node, x), T::zero(), c, root_tol, -1),
    }
}

/// Constant band `lo <= x <= hi` on `nodes` nodes: `l = x - hi`, `r = x - lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantBand<T> {
    pub nodes: usize,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> NodeBoundary<T> for ConstantBand<T> {
    fn node_count(&self) -> usize {
        self.nodes
    }
    fn time(&self, node: usize) -> T {
        T::from_count(node)
    }
    fn l(&self, _node: usize, x: T) -> T {
        x - self.hi
    }
    fn r(&self, _node: usize, x: T) -> T {
        x - self.lo
    }
    fn slope_bounds(&self) -> (T, T) {
        (T::one(), T::one())
    }
    fn band(&self, _node: usize, _root_tol: T) -> Result<Band<T>> {
        Ok(Band { lo: self.lo, hi: self.hi })
    }
}

/// Time-dependent band with unit slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingBand<T> {
    times: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> MovingBand<T> {
    pub fn new(times: Vec<T>, lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if times.len() != lo.len() || times.len() != hi.len() || times.is_empty() {
            return Err(Error::invalid("moving band needs equally long non-empty node vectors"));
        }
        Ok(Self { times, lo, hi })
    }

    pub fn on_grid(grid: &TimeGrid<T>, lo: impl Fn(T) -> T, hi: impl Fn(T) -> T) -> Self {
        let times = grid.nodes().to_vec();
        let l = times.iter().map(|&t| lo(t)).collect();
        let h = times.iter().map(|&t| hi(t)).collect();
        Self { times, lo: l, hi: h }
    }
}

impl<T: Real> NodeBoundary<T> for MovingBand<T> {
    fn node_count(&self) -> usize {
        self.times.len()
    }
    fn time(&self, node: usize) -> T {
        self.times[node]
    }
    fn l(&self, node: usize, x: T) -> T {
        x - self.hi[node]
    }
    fn r(&self, node: usize, x: T) -> T {
        x - self.lo[node]
    }
    fn slope_bounds(&self) -> (T, T) {
        (T::one(), T::one())
    }
    fn band(&self, node: usize, _root_tol: T) -> Result<Band<T>> {
        Ok(Band { lo: self.lo[node], hi: self.hi[node] })
    }
}

pub type NodeFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// Boundary given by closures `(t, x) -> value` on the nodes of a grid.
#[derive(Clone)]
pub struct FnBoundary<T> {
    times: Vec<T>,
    l: NodeFn<T>,
    r: NodeFn<T>,
    c: T,
    big_c: T,
}

impl<T: Real> FnBoundary<T> {
    pub fn new(
        grid: &TimeGrid<T>,
        l: impl Fn(T, T) -> T + Send + Sync + 'static,
        r: impl Fn(T, T) -> T + Send + Sync + 'static,
        c: T,
        big_c: T,
    ) -> Self {
        Self { times: grid.nodes().to_vec(), l: Arc::new(l), r: Arc::new(r), c, big_c }
    }
}

impl<T: Real> NodeBoundary<T> for FnBoundary<T> {
    fn node_count(&self) -> usize {
        self.times.len()
    }
    fn time(&self, node: usize) -> T {
        self.times[node]
    }
    fn l(&self, node: usize, x: T) -> T {
        (self.l)(self.times[node], x)
    }
    fn r(&self, node: usize, x: T) -> T {
        (self.r)(self.times[node], x)
    }
    fn slope_bounds(&self) -> (T, T) {
        (self.c, self.big_c)
    }
}

/// Time reversal: node `k` of the wrapper is node `M - k` of `inner`.
#[derive(Debug, Clone, Copy)]
pub struct Reversed<'a, B: ?Sized> {
    inner: &'a B,
}

impl<'a, B: ?Sized> Reversed<'a, B> {
    pub fn new(inner: &'a B) -> Self {
        Self { inner }
    }
}

impl<T: Real, B: NodeBoundary<T> + ?Sized> NodeBoundary<T> for Reversed<'_, B> {
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }
    fn time(&self, node: usize) -> T {
        let m = self.inner.node_count() - 1;
        self.inner.time(0) + self.inner.time(m) - self.inner.time(m - node)
    }
    fn l(&self, node: usize, x: T) -> T {
        self.inner.l(self.inner.node_count() - 1 - node, x)
    }
    fn r(&self, node: usize, x: T) -> T {
        self.inner.r(self.inner.node_count() - 1 - node, x)
    }
    fn slope_bounds(&self) -> (T, T) {
        self.inner.slope_bounds()
    }
    fn band(&self, node: usize, root_tol: T) -> Result<Band<T>> {
        self.inner.band(self.inner.node_count() - 1 - node, root_tol)
    }
}

#[derive(Debug, Clone, Copy)]
struct AffineNode<T> {
    l: (T, T),
    r: (T, T),
}

/// Mean-level boundary of an ensemble:
/// `l(t_k, x) = E_N[L(t_k, Y_k - E_N[Y_k] + x)]` and likewise for `r`.
///
/// `x` is the candidate value of the mean, so `l(t_k, E_N[Y_k]) = E_N[L(t_k, Y_k)]`.
#[derive(Debug, Clone)]
pub struct MeanBoundary<'a, T> {
    ensemble: &'a Ensemble<T>,
    losses: LossPair<T>,
    means: Vec<T>,
    affine: Vec<Option<AffineNode<T>>>,
}

impl<'a, T: Real> MeanBoundary<'a, T> {
    pub fn losses(&self) -> &LossPair<T> {
        &self.losses
    }

    /// Cross-sectional mean of the source ensemble at `node`.
    pub fn mean(&self, node: usize) -> T {
        self.means[node]
    }
}

/// Builds the mean-level boundary of `ensemble` under `losses`.
pub fn make_mean_boundary<'a, T: Real>(
    ensemble: &'a Ensemble<T>,
    losses: &LossPair<T>,
) -> Result<MeanBoundary<'a, T>> {
    let nodes = ensemble.nodes();
    let means: Vec<T> = (0..nodes).map(|k| stats::mean(ensemble.cross_section(k))).collect();
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::NumericalFailure("ensemble contains non-finite values".into()));
    }
    let affine = (0..nodes)
        .map(|k| {
            let t = ensemble.grid().time(k);
            match (losses.lower.affine_at(t), losses.upper.affine_at(t)) {
                (Some(l), Some(r)) => Some(AffineNode { l, r }),
                _ => None,
            }
        })
        .collect();
    Ok(MeanBoundary { ensemble, losses: losses.clone(), means, affine })
}

impl<T: Real> NodeBoundary<T> for MeanBoundary<'_, T> {
    fn node_count(&self) -> usize {
        self.ensemble.nodes()
    }

    fn time(&self, node: usize) -> T {
        self.ensemble.grid().time(node)
    }

    fn l(&self, node: usize, x: T) -> T {
        if let Some(a) = &self.affine[node] {
            return a.l.0 * x + a.l.1;
        }
        let t = self.time(node);
        let m = self.means[node];
        let ys = self.ensemble.cross_section(node);
        stats::mean_by(ys.len(), &|i| self.losses.lower.eval(t, ys[i] - m + x))
    }

    fn r(&self, node: usize, x: T) -> T {
        if let Some(a) = &self.affine[node] {
            return a.r.0 * x + a.r.1;
        }
        let t = self.time(node);
        let m = self.means[node];
        let ys = self.ensemble.cross_section(node);
        stats::mean_by(ys.len(), &|i| self.losses.upper.eval(t, ys[i] - m + x))
    }

    fn slope_bounds(&self) -> (T, T) {
        (self.losses.c, self.losses.big_c)
    }
}
