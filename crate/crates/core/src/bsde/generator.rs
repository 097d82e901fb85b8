use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats;

/// Empirical law handed to a generator: the cross-section and its mean.
#[derive(Debug, Clone, Copy)]
pub struct Law<'a, T> {
    pub samples: &'a [T],
    pub mean: T,
}

impl<'a, T: Real> Law<'a, T> {
    pub fn of(samples: &'a [T]) -> Self {
        Self { samples, mean: stats::mean(samples) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    Lipschitz,
    QuadraticZ,
}

pub type GeneratorEval<T> = Arc<dyn Fn(T, T, &Law<'_, T>, T, &Law<'_, T>) -> T + Send + Sync>;

#[derive(Clone)]
pub enum GeneratorKind<T> {
    Zero,
    Constant(T),
    /// `y a_y + E[y] a_mean_y + z a_z + E[z] a_mean_z + constant`
    Linear { y: T, mean_y: T, z: T, mean_z: T, constant: T },
    /// `(gamma/2) z^2 + y a_y + E[y] a_mean_y + constant`
    Quadratic { gamma: T, y: T, mean_y: T, constant: T },
    /// `f(t, y, law_y, z, law_z)`
    Custom(GeneratorEval<T>),
}

impl<T: fmt::Debug> fmt::Debug for GeneratorKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::Zero => f.write_str("Zero"),
            GeneratorKind::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            GeneratorKind::Linear { y, mean_y, z, mean_z, constant } => f
                .debug_struct("Linear")
                .field("y", y)
                .field("mean_y", mean_y)
                .field("z", z)
                .field("mean_z", mean_z)
                .field("constant", constant)
                .finish(),
            GeneratorKind::Quadratic { gamma, y, mean_y, constant } => f
                .debug_struct("Quadratic")
                .field("gamma", gamma)
                .field("y", y)
                .field("mean_y", mean_y)
                .field("constant", constant)
                .finish(),
            GeneratorKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Mean-field generator `f(t, y, P_y, z, P_z)` with its declared constants.
///
/// Quadratic generators never depend on the law of `z`.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    kind: GeneratorKind<T>,
    mode: GeneratorMode,
    lambda: T,
    gamma: T,
    alpha: T,
    depends_on_z_law: bool,
}

impl<T: Real> Generator<T> {
    pub fn zero() -> Self {
        Self::constant(T::zero())
    }

    pub fn constant(c: T) -> Self {
        let kind = if c == T::zero() { GeneratorKind::Zero } else { GeneratorKind::Constant(c) };
        Self {
            kind,
            mode: GeneratorMode::Lipschitz,
            lambda: T::zero(),
            gamma: T::zero(),
            alpha: c.abs(),
            depends_on_z_law: false,
        }
    }

    pub fn linear(y: T, mean_y: T, z: T, mean_z: T, constant: T) -> Self {
        let lambda = y.abs().max(mean_y.abs()).max(z.abs()).max(mean_z.abs());
        Self {
            kind: GeneratorKind::Linear { y, mean_y, z, mean_z, constant },
            mode: GeneratorMode::Lipschitz,
            lambda,
            gamma: T::zero(),
            alpha: constant.abs(),
            depends_on_z_law: mean_z != T::zero(),
        }
    }

    pub fn quadratic(gamma: T, y: T, mean_y: T, constant: T) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::invalid(format!("quadratic generator needs gamma > 0, got {gamma}")));
        }
        Ok(Self {
            kind: GeneratorKind::Quadratic { gamma, y, mean_y, constant },
            mode: GeneratorMode::QuadraticZ,
            lambda: y.abs().max(mean_y.abs()),
            gamma,
            alpha: constant.abs(),
            depends_on_z_law: false,
        })
    }

    /// Arbitrary generator with declared constants. Rejects quadratic
    /// generators that depend on the law of `z`.
    pub fn custom(
        mode: GeneratorMode,
        lambda: T,
        gamma: T,
        alpha: T,
        depends_on_z_law: bool,
        f: impl Fn(T, T, &Law<'_, T>, T, &Law<'_, T>) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        if mode == GeneratorMode::QuadraticZ && depends_on_z_law {
            return Err(Error::invalid("quadratic generators may not depend on the law of z"));
        }
        if !(lambda >= T::zero()) || !(gamma >= T::zero()) || !(alpha >= T::zero()) {
            return Err(Error::invalid("generator constants must be non-negative"));
        }
        Ok(Self { kind: GeneratorKind::Custom(Arc::new(f)), mode, lambda, gamma, alpha, depends_on_z_law })
    }

    pub fn kind(&self) -> &GeneratorKind<T> {
        &self.kind
    }

    pub fn mode(&self) -> GeneratorMode {
        self.mode
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn depends_on_z_law(&self) -> bool {
        self.depends_on_z_law
    }

    /// True when `f` ignores `(y, P_y, z, P_z)`.
    pub fn is_state_independent(&self) -> bool {
        matches!(self.kind, GeneratorKind::Zero | GeneratorKind::Constant(_))
    }

    #[inline]
    pub fn eval(&self, t: T, y: T, law_y: &Law<'_, T>, z: T, law_z: &Law<'_, T>) -> T {
        match &self.kind {
            GeneratorKind::Zero => T::zero(),
            GeneratorKind::Constant(c) => *c,
            GeneratorKind::Linear { y: ay, mean_y, z: az, mean_z, constant } => {
                *ay * y + *mean_y * law_y.mean + *az * z + *mean_z * law_z.mean + *constant
            }
            GeneratorKind::Quadratic { gamma, y: ay, mean_y, constant } => {
                *gamma * T::lit(0.5) * z * z + *ay * y + *mean_y * law_y.mean + *constant
            }
            GeneratorKind::Custom(f) => f(t, y, law_y, z, law_z),
        }
    }
}

/// Worst observed ratio of a spot check against its declared bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SpotCheck<T> {
    pub trials: usize,
    /// `max observed / allowed`; at most one when the check passes.
    pub worst_ratio: T,
    pub holds: bool,
}

fn random_law<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let centre = rng.random_range(-3.0..3.0);
    (0..n).map(|_| centre + rng.random_range(-2.0..2.0)).collect()
}

fn to_t<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Spot-tests the Lipschitz condition
/// `|f - f'| <= lambda (|y - y'| + |z - z'| + W1(mu, mu') + W1(nu, nu'))`
/// on random arguments drawn from `seed`. The `z` arguments are kept in
/// `[-1, 1]` for quadratic generators, whose `z`-dependence is only locally
/// Lipschitz; there `|z - z'|` is weighted by `gamma` times the range.
pub fn check_lipschitz<T: Real>(gen: &Generator<T>, t_samples: &[T], trials: usize, seed: u64) -> Result<SpotCheck<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_range = if gen.mode() == GeneratorMode::QuadraticZ { 1.0 } else { 5.0 };
    let mut worst = T::zero();
    for trial in 0..trials {
        let t = t_samples[trial % t_samples.len()];
        let n = 1 + trial % 7;
        let (mu, mu2, nu, nu2) = (
            to_t::<T>(&random_law(&mut rng, n)),
            to_t::<T>(&random_law(&mut rng, n)),
            to_t::<T>(&random_law(&mut rng, n)),
            to_t::<T>(&random_law(&mut rng, n)),
        );
        let (y, y2) = (T::lit(rng.random_range(-5.0..5.0)), T::lit(rng.random_range(-5.0..5.0)));
        let (z, z2) = (
            T::lit(rng.random_range(-z_range..z_range)),
            T::lit(rng.random_range(-z_range..z_range)),
        );
        let f1 = gen.eval(t, y, &Law::of(&mu), z, &Law::of(&nu));
        let f2 = gen.eval(t, y2, &Law::of(&mu2), z2, &Law::of(&nu2));
        let w = stats::w1_empirical(&mu, &mu2)? + stats::w1_empirical(&nu, &nu2)?;
        let z_lip = gen.lambda().max(gen.gamma() * T::lit(z_range));
        let allowed = gen.lambda() * ((y - y2).abs() + w) + z_lip * (z - z2).abs();
        let gap = (f1 - f2).abs();
        let ratio = if allowed > T::zero() {
            gap / allowed
        } else if gap > T::zero() {
            T::infinity()
        } else {
            T::zero()
        };
        worst = worst.max(ratio);
    }
    Ok(SpotCheck { trials, worst_ratio: worst, holds: worst <= T::one() + T::lit(1e-9) })
}

/// Spot-tests the growth envelope
/// `|f| <= alpha + lambda (|y| + W1(mu, delta_0)) + (gamma/2) z^2 (+ lambda (|z| + W1(nu, delta_0)))`,
/// the bracketed term only in Lipschitz mode.
pub fn check_growth<T: Real>(gen: &Generator<T>, t_samples: &[T], trials: usize, seed: u64) -> SpotCheck<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for trial in 0..trials {
        let t = t_samples[trial % t_samples.len()];
        let n = 1 + trial % 5;
        let mu = to_t::<T>(&random_law(&mut rng, n));
        let nu = to_t::<T>(&random_law(&mut rng, n));
        let y = T::lit(rng.random_range(-5.0..5.0));
        let z = T::lit(rng.random_range(-5.0..5.0));
        let f = gen.eval(t, y, &Law::of(&mu), z, &Law::of(&nu));
        let abs_mean = |v: &[T]| stats::mean_by(v.len(), &|i| v[i].abs());
        let mut allowed = gen.alpha() + gen.lambda() * (y.abs() + abs_mean(&mu)) + gen.gamma() * T::lit(0.5) * z * z;
        if gen.mode() == GeneratorMode::Lipschitz {
            allowed = allowed + gen.lambda() * (z.abs() + abs_mean(&nu));
        }
        let ratio = if allowed > T::zero() { f.abs() / allowed } else if f != T::zero() { T::infinity() } else { T::zero() };
        worst = worst.max(ratio);
    }
    SpotCheck { trials, worst_ratio: worst, holds: worst <= T::one() + T::lit(1e-9) }
}
