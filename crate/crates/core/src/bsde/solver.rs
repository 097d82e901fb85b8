use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Ensemble;
use crate::scalar::Real;
use crate::stats;

use super::generator::{Generator, Law};
use super::regression::{Projector, RegressionConfig, ZMode};

/// Particle solution `(y, z)` of a backward equation. `z` vanishes at the
/// terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct BSDESolution<T> {
    pub y: Ensemble<T>,
    pub z: Ensemble<T>,
}

/// Driver of the backward recursion at one node. `y_pred` is the explicit
/// predictor `E_k[y_{k+1}]` and `z` the estimate at the node.
pub trait Driver<T: Real>: Sync {
    fn evaluate(&self, node: usize, t: T, y_pred: &[T], z: &[T], out: &mut [T]);
}

/// Full mean-field evaluation with laws taken from the current cross-sections.
impl<T: Real> Driver<T> for Generator<T> {
    fn evaluate(&self, _node: usize, t: T, y_pred: &[T], z: &[T], out: &mut [T]) {
        if let Some(c) = state_independent_value(self) {
            out.iter_mut().for_each(|o| *o = c);
            return;
        }
        let law_y = Law::of(y_pred);
        let law_z = Law::of(z);
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = self.eval(t, y_pred[i], &law_y, z[i], &law_z));
    }
}

fn state_independent_value<T: Real>(gen: &Generator<T>) -> Option<T> {
    if gen.is_state_independent() {
        let empty: [T; 0] = [];
        let law = Law { samples: &empty, mean: T::zero() };
        Some(gen.eval(T::zero(), T::zero(), &law, T::zero(), &law))
    } else {
        None
    }
}

/// Driver given as a fixed per-particle path.
#[derive(Debug, Clone, Copy)]
pub struct FrozenDriver<'a, T> {
    values: &'a Ensemble<T>,
}

impl<'a, T: Real> FrozenDriver<'a, T> {
    pub fn new(values: &'a Ensemble<T>) -> Self {
        Self { values }
    }
}

impl<T: Real> Driver<T> for FrozenDriver<'_, T> {
    fn evaluate(&self, node: usize, _t: T, _y_pred: &[T], _z: &[T], out: &mut [T]) {
        out.copy_from_slice(self.values.cross_section(node));
    }
}

/// `f(t, U, P_U, z, P_z)`: the `y`-arguments frozen at `u`, `z` live.
#[derive(Debug, Clone, Copy)]
pub struct YFrozenDriver<'a, T> {
    gen: &'a Generator<T>,
    u: &'a Ensemble<T>,
}

impl<'a, T: Real> YFrozenDriver<'a, T> {
    pub fn new(gen: &'a Generator<T>, u: &'a Ensemble<T>) -> Self {
        Self { gen, u }
    }
}

impl<T: Real> Driver<T> for YFrozenDriver<'_, T> {
    fn evaluate(&self, node: usize, t: T, _y_pred: &[T], z: &[T], out: &mut [T]) {
        self.gen.evaluate(node, t, self.u.cross_section(node), z, out);
    }
}

/// Per-particle driver path `f(t, U, P_U, V, P_V)` along frozen ensembles.
pub fn constant_driver_path<T: Real>(gen: &Generator<T>, u: &Ensemble<T>, v: &Ensemble<T>) -> Result<Ensemble<T>> {
    if u.nodes() != v.nodes() || u.particles() != v.particles() {
        return Err(Error::invalid("frozen ensembles are not aligned"));
    }
    let n = u.particles();
    let mut out = Ensemble::zeros(u.grid().clone(), n);
    for k in 0..u.nodes() {
        let t = u.grid().time(k);
        gen.evaluate(k, t, u.cross_section(k), v.cross_section(k), out.cross_section_mut(k));
    }
    Ok(out)
}

/// Deterministic force added to every particle over step `k`, given the
/// step index, the mean of the predictor and the mean of the driver.
pub type MeanForce<'a, T> = dyn FnMut(usize, T, T) -> Result<T> + 'a;

/// Explicit backward Euler for a mean-field generator.
pub fn solve_bsde<T: Real>(
    terminal: &[T],
    gen: &Generator<T>,
    bm: &Ensemble<T>,
    cfg: &RegressionConfig<T>,
) -> Result<BSDESolution<T>> {
    backward_sweep(terminal, gen, bm, cfg, None)
}

/// Shared backward recursion
/// `y_k = E_k[y_{k+1}] + f_k dt_k + F_k`,
/// `z_k = E_k[(y_{k+1} - E_k[y_{k+1}]) dB_k] / dt_k`,
/// where `F_k` is the optional mean force. The force is only added when
/// non-zero, so an inactive force reproduces the plain solve bit for bit.
pub fn backward_sweep<T: Real>(
    terminal: &[T],
    driver: &dyn Driver<T>,
    bm: &Ensemble<T>,
    cfg: &RegressionConfig<T>,
    mut mean_force: Option<&mut MeanForce<'_, T>>,
) -> Result<BSDESolution<T>> {
    cfg.validate()?;
    let n = bm.particles();
    if terminal.len() != n {
        return Err(Error::invalid(format!(
            "terminal has {} values for {} particles",
            terminal.len(),
            n
        )));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("terminal values must be finite"));
    }
    let grid = bm.grid().clone();
    let m = grid.steps();
    let mut y = Ensemble::zeros(grid.clone(), n);
    let mut z = Ensemble::zeros(grid.clone(), n);
    y.cross_section_mut(m).copy_from_slice(terminal);

    let mut e_hat = vec![T::zero(); n];
    let mut z_hat = vec![T::zero(); n];
    let mut work = vec![T::zero(); n];
    let mut f = vec![T::zero(); n];
    for k in (0..m).rev() {
        let dt = grid.dt(k);
        let t = grid.time(k);
        let b_k = bm.cross_section(k);
        let b_next = bm.cross_section(k + 1);
        let next = y.cross_section(k + 1);
        let proj = Projector::new(b_k, cfg.degree, cfg.ridge)?;
        proj.project_into(next, &mut e_hat)?;
        match cfg.z_mode {
            ZMode::Regression => {
                // E_k[e_hat dB] = 0, so centring by the predictor only removes variance
                work.par_iter_mut()
                    .enumerate()
                    .for_each(|(i, w)| *w = (next[i] - e_hat[i]) * (b_next[i] - b_k[i]));
                proj.project_into(&work, &mut z_hat)?;
                let inv_dt = T::one() / dt;
                z_hat.par_iter_mut().for_each(|v| *v = *v * inv_dt);
            }
            ZMode::None => z_hat.iter_mut().for_each(|v| *v = T::zero()),
        }
        driver.evaluate(k, t, &e_hat, &z_hat, &mut f);
        let force = match mean_force.as_deref_mut() {
            Some(hook) => hook(k, stats::mean(&e_hat), stats::mean(&f))?,
            None => T::zero(),
        };
        let out = y.cross_section_mut(k);
        if force != T::zero() {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = e_hat[i] + f[i] * dt + force);
        } else {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = e_hat[i] + f[i] * dt);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite value at node {k}")));
        }
        z.cross_section_mut(k).copy_from_slice(&z_hat);
    }
    Ok(BSDESolution { y, z })
}
