use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats;

/// How `Z` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZMode {
    Regression,
    None,
}

/// Least-squares conditional expectation on Hermite polynomials of the
/// standardized Brownian state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig<T> {
    pub degree: usize,
    /// Added to the non-intercept diagonal of the normal equations, so the
    /// fitted values keep the sample mean of the target.
    pub ridge: T,
    pub z_mode: ZMode,
}

impl<T: Real> Default for RegressionConfig<T> {
    fn default() -> Self {
        Self { degree: 3, ridge: T::lit(1e-10), z_mode: ZMode::Regression }
    }
}

impl<T: Real> RegressionConfig<T> {
    pub fn with_degree(degree: usize) -> Self {
        Self { degree, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= T::zero()) {
            return Err(Error::invalid(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        if self.degree > 12 {
            return Err(Error::invalid(format!("regression degree {} is too large", self.degree)));
        }
        Ok(())
    }
}

const CHUNK: usize = 2048;

/// Projection onto `span{He_0(u), ..., He_d(u)}` with `u` the standardized
/// state. Degenerate (constant) states fall back to degree 0.
#[derive(Debug, Clone)]
pub struct Projector<T> {
    p: usize,
    n: usize,
    features: Vec<T>,
    /// Lower Cholesky factor of the regularized Gram matrix, row-major.
    chol: Vec<T>,
}

impl<T: Real> Projector<T> {
    pub fn new(state: &[T], degree: usize, ridge: T) -> Result<Self> {
        let n = state.len();
        if n == 0 {
            return Err(Error::invalid("regression needs at least one sample"));
        }
        let m = stats::mean(state);
        let sd = stats::std_dev(state);
        let degenerate = !(sd > T::lit(1e-12) * (T::one() + m.abs()));
        let p = if degenerate { 1 } else { degree + 1 };
        let mut features = vec![T::zero(); n * p];
        features.par_chunks_mut(p).zip(state.par_iter()).for_each(|(row, &b)| {
            row[0] = T::one();
            if p > 1 {
                let u = (b - m) / sd;
                row[1] = u;
                for j in 1..p - 1 {
                    row[j + 1] = u * row[j] - T::from_count(j) * row[j - 1];
                }
            }
        });

        let partials: Vec<Vec<T>> = features
            .par_chunks(CHUNK * p)
            .map(|rows| {
                let mut g = vec![T::zero(); p * p];
                for row in rows.chunks_exact(p) {
                    for a in 0..p {
                        for b in 0..=a {
                            g[a * p + b] = g[a * p + b] + row[a] * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let inv_n = T::one() / T::from_count(n);
        let mut gram = vec![T::zero(); p * p];
        for part in &partials {
            for (acc, v) in gram.iter_mut().zip(part) {
                *acc = *acc + *v;
            }
        }
        for v in gram.iter_mut() {
            *v = *v * inv_n;
        }
        for j in 1..p {
            gram[j * p + j] = gram[j * p + j] + ridge;
        }
        let chol = cholesky(&gram, p)?;
        Ok(Self { p, n, features, chol })
    }

    pub fn basis_size(&self) -> usize {
        self.p
    }

    /// Least-squares coefficients of `target` on the basis.
    pub fn coefficients(&self, target: &[T]) -> Result<Vec<T>> {
        if target.len() != self.n {
            return Err(Error::invalid("regression target has the wrong length"));
        }
        let p = self.p;
        let partials: Vec<Vec<T>> = self
            .features
            .par_chunks(CHUNK * p)
            .zip(target.par_chunks(CHUNK))
            .map(|(rows, ys)| {
                let mut acc = vec![T::zero(); p];
                for (row, &y) in rows.chunks_exact(p).zip(ys) {
                    for a in 0..p {
                        acc[a] = acc[a] + row[a] * y;
                    }
                }
                acc
            })
            .collect();
        let mut rhs = vec![T::zero(); p];
        for part in &partials {
            for (acc, v) in rhs.iter_mut().zip(part) {
                *acc = *acc + *v;
            }
        }
        let inv_n = T::one() / T::from_count(self.n);
        for v in rhs.iter_mut() {
            *v = *v * inv_n;
        }
        let beta = cholesky_solve(&self.chol, p, &rhs);
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NumericalFailure("regression produced non-finite coefficients".into()));
        }
        Ok(beta)
    }

    /// Fitted values of `target`, written into `out`.
    pub fn project_into(&self, target: &[T], out: &mut [T]) -> Result<()> {
        let beta = self.coefficients(target)?;
        let p = self.p;
        out.par_iter_mut().zip(self.features.par_chunks(p)).for_each(|(o, row)| {
            let mut acc = T::zero();
            for a in 0..p {
                acc = acc + beta[a] * row[a];
            }
            *o = acc;
        });
        Ok(())
    }

    pub fn project(&self, target: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.n];
        self.project_into(target, &mut out)?;
        Ok(out)
    }
}

fn cholesky<T: Real>(a: &[T], p: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); p * p];
    let scale = (0..p).map(|j| a[j * p + j].abs()).fold(T::zero(), T::max);
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s = s - l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > T::epsilon() * T::lit(16.0) * scale) {
                    return Err(Error::NumericalFailure(format!(
                        "singular regression system (pivot {s:e} at basis function {i}); increase ridge or lower degree"
                    )));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve<T: Real>(l: &[T], p: usize, b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s = s - l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}
