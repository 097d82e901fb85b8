//! Doubly mean-reflected BSDEs: the constant-driver construction and the
//! Picard fixed point on top of it.
//!
//! For a frozen driver the unreflected solution `y` is computed first; the
//! force is then the backward Skorokhod solution for the mean input
//! `s_t = E[y_0] - E[y_t]` anchored at `E[xi]`, with boundaries averaged over
//! the recentred cross-sections of `y`, and `Y = y + K_T - K_t`.

use std::sync::Arc;

use serde::Serialize;

use crate::bsde::{
    backward_sweep, constant_driver_path, solve_bsde, BSDESolution, FrozenDriver, Generator, GeneratorMode,
    RegressionConfig, YFrozenDriver,
};
use crate::constraints::{make_mean_boundary, LinearEnvelope, LinearObstacles, LossPair};
use crate::error::{Error, Result};
use crate::grid::{simulate_brownian, Ensemble, RngSpec, SamplePath, TimeGrid};
use crate::scalar::{negative_part, positive_part, Real};
use crate::skorokhod::{solve_bsp_with, total_variation, ReflectionConfig};
use crate::stats;

/// Terminal value as a function of `B_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalSpec<T> {
    /// `shift + scale B_T`
    Brownian { scale: T, shift: T },
    /// `shift + amplitude sin(B_T)`
    Sin { amplitude: T, shift: T },
    /// `shift + scale (B_T - E_N[B_T])`; the sample mean is exactly `shift`
    /// up to rounding.
    CentredBrownian { scale: T, shift: T },
    Constant(T),
}

impl<T: Real> TerminalSpec<T> {
    pub fn sample(&self, b_terminal: &[T]) -> Vec<T> {
        match *self {
            TerminalSpec::Brownian { scale, shift } => b_terminal.iter().map(|b| shift + scale * *b).collect(),
            TerminalSpec::Sin { amplitude, shift } => b_terminal.iter().map(|b| shift + amplitude * b.sin()).collect(),
            TerminalSpec::CentredBrownian { scale, shift } => {
                let m = stats::mean(b_terminal);
                b_terminal.iter().map(|b| shift + scale * (*b - m)).collect()
            }
            TerminalSpec::Constant(c) => vec![c; b_terminal.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardInit {
    /// `Y^0 = 0`, `Z^0 = 0`.
    Zero,
    /// `(Y^0, Z^0)` = the unreflected mean-field solution.
    Unreflected,
}

/// Numerical settings shared by the mean-reflected solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    pub regression: RegressionConfig<T>,
    pub reflection: ReflectionConfig<T>,
    pub picard_tol: T,
    pub max_iterations: usize,
    /// Width of the statistical tolerance in standard errors.
    pub stat_sigmas: T,
    /// A window is split when the second Picard step contracts by less than this.
    pub split_ratio: T,
    pub allow_split: bool,
    /// Windows shorter than twice this many steps are never split.
    pub min_window_steps: usize,
    pub init: PicardInit,
    pub penalty: PenaltyConfig<T>,
}

/// Sub-cycling of the penalized mean dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig<T> {
    /// Largest `n h` allowed for a mean sub-step `h`.
    pub stiff_max: T,
    /// Largest sub-step regardless of `n`.
    pub max_substep: T,
}

impl<T: Real> Default for PenaltyConfig<T> {
    fn default() -> Self {
        Self { stiff_max: T::lit(0.5), max_substep: T::lit(1e-3) }
    }
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            regression: RegressionConfig::default(),
            reflection: ReflectionConfig::default(),
            picard_tol: T::lit(1e-6),
            max_iterations: 50,
            stat_sigmas: T::lit(4.0),
            split_ratio: T::lit(0.9),
            allow_split: true,
            min_window_steps: 2,
            init: PicardInit::Zero,
            penalty: PenaltyConfig::default(),
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub horizon: T,
    pub steps: usize,
    pub particles: usize,
    pub rng: RngSpec,
    pub terminal: TerminalSpec<T>,
    pub generator: Generator<T>,
    pub losses: LossPair<T>,
    /// Required for quadratic generators.
    pub envelope: Option<LinearEnvelope<T>>,
    /// Required by the penalization scheme.
    pub obstacles: Option<LinearObstacles<T>>,
    pub config: SolverConfig<T>,
}

/// Brownian ensemble and terminal particles of a scenario.
#[derive(Debug, Clone)]
pub struct Sampled<T> {
    pub bm: Ensemble<T>,
    pub terminal: Vec<T>,
}

impl<T: Real> Scenario<T> {
    pub fn grid(&self) -> Result<TimeGrid<T>> {
        TimeGrid::uniform(self.horizon, self.steps)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.regression.validate()?;
        if self.particles < 2 {
            return Err(Error::invalid("scenario needs at least 2 particles"));
        }
        if self.generator.mode() == GeneratorMode::QuadraticZ && self.envelope.is_none() {
            return Err(Error::invalid("quadratic generators require a linear envelope"));
        }
        if !(self.config.picard_tol > T::zero()) || self.config.max_iterations == 0 {
            return Err(Error::invalid("picard_tol must be positive and max_iterations at least 1"));
        }
        Ok(())
    }

    pub fn sample(&self) -> Result<Sampled<T>> {
        self.validate()?;
        let grid = Arc::new(self.grid()?);
        let bm = simulate_brownian(&grid, self.particles, &self.rng)?;
        let terminal = self.terminal.sample(bm.cross_section(self.steps));
        Ok(Sampled { bm, terminal })
    }

    pub fn problem<'a>(&'a self, sampled: &'a Sampled<T>) -> Problem<'a, T> {
        Problem {
            bm: &sampled.bm,
            terminal: &sampled.terminal,
            generator: &self.generator,
            losses: &self.losses,
            envelope: self.envelope.as_ref(),
            config: &self.config,
        }
    }
}

/// Borrowed inputs of a solve.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a, T> {
    pub bm: &'a Ensemble<T>,
    pub terminal: &'a [T],
    pub generator: &'a Generator<T>,
    pub losses: &'a LossPair<T>,
    pub envelope: Option<&'a LinearEnvelope<T>>,
    pub config: &'a SolverConfig<T>,
}

/// One Picard iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateRecord<T> {
    /// Global node range `(first, last)` of the window.
    pub window: (usize, usize),
    pub iteration: usize,
    /// `max_k RMS(Y^m_k - Y^{m-1}_k)`.
    pub d_y: T,
    /// `sqrt(sum_k mean (Z^m_k - Z^{m-1}_k)^2 dt_k)`.
    pub d_z: T,
    /// `max_k |K^m_k - K^{m-1}_k|`.
    pub d_k: T,
    pub distance: T,
    pub force_variation: T,
    /// Total variation of the mean path of the unreflected iterate.
    pub inner_mean_variation: T,
    pub anchor: T,
}

/// Per-window contraction data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary<T> {
    pub window: (usize, usize),
    pub iterations: usize,
    pub converged: bool,
    /// Abandoned in favour of two half windows.
    pub split: bool,
    /// Sufficient contraction factors `(4 + 24C/c) lambda h` and
    /// `(32 + 192C/c) lambda h` for comparison with the measured ratios.
    pub theory_factors: (T, T),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PicardTrace<T> {
    pub records: Vec<IterateRecord<T>>,
    pub windows: Vec<WindowSummary<T>>,
    pub converged: bool,
}

impl<T: Real> PicardTrace<T> {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn distances(&self) -> Vec<T> {
        self.records.iter().map(|r| r.distance).collect()
    }

    /// Records of the windows that were kept in the final solution.
    pub fn accepted_records(&self) -> Vec<&IterateRecord<T>> {
        let kept: Vec<(usize, usize)> = self.windows.iter().filter(|w| !w.split).map(|w| w.window).collect();
        self.records.iter().filter(|r| kept.contains(&r.window)).collect()
    }

    /// `d_{m+1} / d_m` within each accepted window.
    pub fn ratios(&self) -> Vec<T> {
        let recs = self.accepted_records();
        recs.windows(2)
            .filter(|w| w[0].window == w[1].window && w[1].iteration == w[0].iteration + 1)
            .map(|w| if w[0].distance > T::zero() { w[1].distance / w[0].distance } else { T::zero() })
            .collect()
    }
}

/// Mean-reflected particle solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MRSolution<T> {
    pub y: Ensemble<T>,
    pub z: Ensemble<T>,
    /// Unreflected `y` with `Y = inner_y + K_T - K_t` at every node.
    pub inner_y: Ensemble<T>,
    pub k: SamplePath<T>,
    pub push_up: SamplePath<T>,
    pub push_down: SamplePath<T>,
    pub mean_y: Vec<T>,
    /// `E_N[L(t_k, Y_k)]`.
    pub mean_l: Vec<T>,
    /// `E_N[R(t_k, Y_k)]`.
    pub mean_r: Vec<T>,
    pub flat_residual_up: T,
    pub flat_residual_down: T,
    pub flat_tol: T,
    /// Tolerance the terminal anchor was accepted with.
    pub anchor_tol: T,
    pub anchor: T,
    pub trace: PicardTrace<T>,
}

impl<T: Real> MRSolution<T> {
    pub fn grid(&self) -> &Arc<TimeGrid<T>> {
        self.y.grid()
    }

    pub fn total_variation(&self) -> T {
        total_variation(&self.k)
    }

    pub fn flat_ok(&self) -> bool {
        self.flat_residual_up <= self.flat_tol && self.flat_residual_down <= self.flat_tol
    }
}

/// `max(stat_tol(L(t, xs)), stat_tol(R(t, xs)))`, floored at `floor`.
pub fn terminal_tolerance<T: Real>(losses: &LossPair<T>, t: T, xs: &[T], sigmas: T, floor: T) -> T {
    let l: Vec<T> = xs.iter().map(|x| losses.lower_at(t, *x)).collect();
    let r: Vec<T> = xs.iter().map(|x| losses.upper_at(t, *x)).collect();
    stats::stat_tol(&l, sigmas).max(stats::stat_tol(&r, sigmas)).max(floor)
}

/// Checks `E[L(t, xs)] <= tol` and `E[R(t, xs)] >= -tol`.
pub fn check_terminal<T: Real>(losses: &LossPair<T>, t: T, xs: &[T], tol: T) -> Result<()> {
    let lower = stats::mean_by(xs.len(), &|i| losses.lower_at(t, xs[i]));
    let upper = stats::mean_by(xs.len(), &|i| losses.upper_at(t, xs[i]));
    if !(lower <= tol && upper >= -tol) {
        return Err(Error::InfeasibleTerminal { lower: lower.as_f64(), upper: upper.as_f64(), tol: tol.as_f64() });
    }
    Ok(())
}

/// Reflects an unreflected solution `(y, z)` on its own grid.
pub fn reflect_inner<T: Real>(
    inner: BSDESolution<T>,
    losses: &LossPair<T>,
    cfg: &SolverConfig<T>,
) -> Result<MRSolution<T>> {
    let BSDESolution { y: inner_y, z } = inner;
    let grid = inner_y.grid().clone();
    let m = grid.steps();
    let n = inner_y.particles();
    let means: Vec<T> = (0..=m).map(|k| stats::mean(inner_y.cross_section(k))).collect();
    let s = SamplePath::new(grid.clone(), means.iter().map(|v| means[0] - *v).collect())?;
    let anchor = means[m];
    let anchor_tol = terminal_tolerance(
        losses,
        grid.horizon(),
        inner_y.cross_section(m),
        cfg.stat_sigmas,
        cfg.reflection.root_tol,
    );
    let boundary = make_mean_boundary(&inner_y, losses)?;
    let bsp = solve_bsp_with(&s, anchor, &boundary, &cfg.reflection, anchor_tol)?;

    let kv = bsp.k.values();
    let k_t = bsp.k.last();
    let mut data = Vec::with_capacity((m + 1) * n);
    for (k, kk) in kv.iter().enumerate() {
        let shift = k_t - *kk;
        data.extend(inner_y.cross_section(k).iter().map(|v| *v + shift));
    }
    let y = Ensemble::from_node_major(grid.clone(), n, data)?;
    let mut mean_y = Vec::with_capacity(m + 1);
    let mut mean_l = Vec::with_capacity(m + 1);
    let mut mean_r = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let t = grid.time(k);
        let ys = y.cross_section(k);
        mean_y.push(stats::mean(ys));
        mean_l.push(stats::mean_by(n, &|i| losses.lower_at(t, ys[i])));
        mean_r.push(stats::mean_by(n, &|i| losses.upper_at(t, ys[i])));
    }
    let (up, down) = (bsp.push_up.values(), bsp.push_down.values());
    let mut flat_up = T::zero();
    let mut flat_down = T::zero();
    for k in 0..m {
        flat_up = flat_up + positive_part(mean_r[k]) * (up[k + 1] - up[k]);
        flat_down = flat_down + negative_part(mean_l[k]) * (down[k + 1] - down[k]);
    }
    let refl = bsp.reflection;
    Ok(MRSolution {
        y,
        z,
        inner_y,
        k: refl.k,
        push_up: refl.push_up,
        push_down: refl.push_down,
        mean_y,
        mean_l,
        mean_r,
        flat_residual_up: flat_up,
        flat_residual_down: flat_down,
        flat_tol: refl.flat_tol,
        anchor_tol,
        anchor,
        trace: PicardTrace::default(),
    })
}

/// Mean-reflected solve with a per-particle driver path.
pub fn solve_constant_driver<T: Real>(problem: &Problem<'_, T>, driver: &Ensemble<T>) -> Result<MRSolution<T>> {
    let cfg = problem.config;
    let bm = problem.bm;
    if driver.nodes() != bm.nodes() || driver.particles() != bm.particles() {
        return Err(Error::invalid("driver path is not aligned with the Brownian ensemble"));
    }
    check_feasible(problem.losses, bm.grid().horizon(), problem.terminal, cfg)?;
    let inner = backward_sweep(problem.terminal, &FrozenDriver::new(driver), bm, &cfg.regression, None)?;
    reflect_inner(inner, problem.losses, cfg)
}

fn check_feasible<T: Real>(losses: &LossPair<T>, t: T, xs: &[T], cfg: &SolverConfig<T>) -> Result<()> {
    let tol = terminal_tolerance(losses, t, xs, cfg.stat_sigmas, cfg.reflection.root_tol);
    check_terminal(losses, t, xs, tol)
}

/// Unreflected mean-field solution of the problem.
pub fn solve_unreflected<T: Real>(problem: &Problem<'_, T>) -> Result<BSDESolution<T>> {
    solve_bsde(problem.terminal, problem.generator, problem.bm, &problem.config.regression)
}

/// One application of the Picard map to the frozen pair `(u, v)`: Lipschitz
/// generators freeze `(Y, Z)`, quadratic generators freeze only `Y`.
pub fn picard_step<T: Real>(
    gen: &Generator<T>,
    losses: &LossPair<T>,
    cfg: &SolverConfig<T>,
    bm: &Ensemble<T>,
    terminal: &[T],
    u: &Ensemble<T>,
    v: &Ensemble<T>,
) -> Result<MRSolution<T>> {
    let inner = match gen.mode() {
        GeneratorMode::Lipschitz => {
            let driver = constant_driver_path(gen, u, v)?;
            backward_sweep(terminal, &FrozenDriver::new(&driver), bm, &cfg.regression, None)?
        }
        GeneratorMode::QuadraticZ => {
            backward_sweep(terminal, &YFrozenDriver::new(gen, u), bm, &cfg.regression, None)?
        }
    };
    reflect_inner(inner, losses, cfg)
}

fn h2_gap<T: Real>(a: &Ensemble<T>, b: &Ensemble<T>) -> T {
    let grid = a.grid();
    let mut acc = T::zero();
    for k in 0..grid.steps() {
        let g = stats::rms_gap(a.cross_section(k), b.cross_section(k));
        acc = acc + g * g * grid.dt(k);
    }
    acc.sqrt()
}

enum WindowOutcome<T> {
    Converged(Box<MRSolution<T>>),
    Split,
    Stalled { iterations: usize, last: T, distances: Vec<T> },
}

struct Context<'a, T> {
    problem: &'a Problem<'a, T>,
    trace: PicardTrace<T>,
}

impl<'a, T: Real> Context<'a, T> {
    fn theory_factors(&self, h: T) -> (T, T) {
        let (c, big_c) = (self.problem.losses.c, self.problem.losses.big_c);
        let lh = self.problem.generator.lambda() * h;
        (
            (T::lit(4.0) + T::lit(24.0) * big_c / c) * lh,
            (T::lit(32.0) + T::lit(192.0) * big_c / c) * lh,
        )
    }

    fn iterate_window(&mut self, first: usize, bm: &Ensemble<T>, terminal: &[T], may_split: bool) -> Result<WindowOutcome<T>> {
        let p = self.problem;
        let cfg = p.config;
        let last = first + bm.grid().steps();
        let window = (first, last);
        let (mut u, mut v) = match cfg.init {
            PicardInit::Zero => (Ensemble::zeros(bm.grid().clone(), bm.particles()), Ensemble::zeros(bm.grid().clone(), bm.particles())),
            PicardInit::Unreflected => {
                let s = solve_bsde(terminal, p.generator, bm, &cfg.regression)?;
                (s.y, s.z)
            }
        };
        let mut k_prev = SamplePath::zeros(bm.grid().clone());
        let mut distances = Vec::new();
        let constant_map = p.generator.is_state_independent();
        for iteration in 1..=cfg.max_iterations {
            let sol = picard_step(p.generator, p.losses, cfg, bm, terminal, &u, &v)?;
            let (d_y, d_z, d_k) = if constant_map && iteration == 1 {
                // the map ignores its argument, so the next iterate equals this one
                (T::zero(), T::zero(), T::zero())
            } else {
                (sol.y.sup_rms_gap(&u), h2_gap(&sol.z, &v), sol.k.sup_gap(&k_prev))
            };
            let distance = d_y + d_z + d_k;
            let inner_means: Vec<T> = (0..sol.inner_y.nodes()).map(|k| stats::mean(sol.inner_y.cross_section(k))).collect();
            self.trace.records.push(IterateRecord {
                window,
                iteration,
                d_y,
                d_z,
                d_k,
                distance,
                force_variation: sol.total_variation(),
                inner_mean_variation: stats::variation(&inner_means),
                anchor: sol.anchor,
            });
            distances.push(distance);
            let h = bm.grid().horizon() - bm.grid().start();
            if distance <= cfg.picard_tol {
                self.trace.windows.push(WindowSummary {
                    window,
                    iterations: iteration,
                    converged: true,
                    split: false,
                    theory_factors: self.theory_factors(h),
                });
                return Ok(WindowOutcome::Converged(Box::new(sol)));
            }
            if may_split && iteration == 2 && distances[0] > T::zero() && distances[1] / distances[0] > cfg.split_ratio {
                self.trace.windows.push(WindowSummary {
                    window,
                    iterations: iteration,
                    converged: false,
                    split: true,
                    theory_factors: self.theory_factors(h),
                });
                return Ok(WindowOutcome::Split);
            }
            k_prev = sol.k;
            u = sol.y;
            v = sol.z;
        }
        let h = bm.grid().horizon() - bm.grid().start();
        self.trace.windows.push(WindowSummary {
            window,
            iterations: cfg.max_iterations,
            converged: false,
            split: may_split,
            theory_factors: self.theory_factors(h),
        });
        let last_distance = *distances.last().unwrap_or(&T::infinity());
        Ok(WindowOutcome::Stalled { iterations: cfg.max_iterations, last: last_distance, distances })
    }

    fn solve_window(&mut self, first: usize, last: usize, terminal: &[T]) -> Result<MRSolution<T>> {
        let p = self.problem;
        let cfg = p.config;
        let full = first == 0 && last + 1 == p.bm.nodes();
        let owned;
        let bm = if full {
            p.bm
        } else {
            owned = p.bm.window(first, last)?;
            &owned
        };
        let may_split = cfg.allow_split && last - first >= 2 * cfg.min_window_steps.max(1);
        match self.iterate_window(first, bm, terminal, may_split)? {
            WindowOutcome::Converged(sol) => Ok(*sol),
            WindowOutcome::Stalled { iterations, last: d, distances } if !may_split => Err(Error::NonConvergence {
                iterations,
                last_distance: d.as_f64(),
                distances: distances.iter().map(|v| v.as_f64()).collect(),
            }),
            WindowOutcome::Split | WindowOutcome::Stalled { .. } => {
                let mid = first + (last - first) / 2;
                let right = self.solve_window(mid, last, terminal)?;
                let t_mid = right.grid().start();
                let next_terminal = right.y.cross_section(0).to_vec();
                check_feasible(p.losses, t_mid, &next_terminal, cfg)?;
                let left = self.solve_window(first, mid, &next_terminal)?;
                stitch(left, right)
            }
        }
    }
}

/// Joins solutions on adjacent windows sharing one node. The left inner
/// solution is shifted by the right window's total force so the
/// representation `Y = inner_y + K_T - K_t` holds globally.
fn stitch<T: Real>(left: MRSolution<T>, right: MRSolution<T>) -> Result<MRSolution<T>> {
    let ml = left.grid().steps();
    let n = left.y.particles();
    let mut nodes = left.grid().nodes().to_vec();
    nodes.extend_from_slice(&right.grid().nodes()[1..]);
    let grid = Arc::new(TimeGrid::from_nodes(nodes)?);

    let join = |a: &Ensemble<T>, b: &Ensemble<T>, shift: T, take_b_at_join: bool| -> Result<Ensemble<T>> {
        let mut data = Vec::with_capacity(grid.len() * n);
        for k in 0..ml {
            data.extend(a.cross_section(k).iter().map(|v| *v + shift));
        }
        if take_b_at_join {
            data.extend_from_slice(b.cross_section(0));
        } else {
            data.extend(a.cross_section(ml).iter().map(|v| *v + shift));
        }
        for k in 1..b.nodes() {
            data.extend_from_slice(b.cross_section(k));
        }
        Ensemble::from_node_major(grid.clone(), n, data)
    };
    let right_total = right.k.last();
    let y = join(&left.y, &right.y, T::zero(), true)?;
    let z = join(&left.z, &right.z, T::zero(), true)?;
    let inner_y = join(&left.inner_y, &right.inner_y, -right_total, true)?;

    let concat = |a: &SamplePath<T>, b: &SamplePath<T>| -> Result<SamplePath<T>> {
        let offset = a.last();
        let mut v = a.values().to_vec();
        v.extend(b.values()[1..].iter().map(|x| offset + *x));
        SamplePath::new(grid.clone(), v)
    };
    let join_vec = |a: &[T], b: &[T]| -> Vec<T> {
        let mut v = a[..ml].to_vec();
        v.extend_from_slice(b);
        v
    };
    let push_up = concat(&left.push_up, &right.push_up)?;
    let push_down = concat(&left.push_down, &right.push_down)?;
    let k = SamplePath::new(
        grid.clone(),
        push_up.values().iter().zip(push_down.values()).map(|(u, d)| *u - *d).collect(),
    )?;
    let mut trace = left.trace;
    trace.records.extend(right.trace.records);
    trace.windows.extend(right.trace.windows);
    Ok(MRSolution {
        y,
        z,
        inner_y,
        k,
        push_up,
        push_down,
        mean_y: join_vec(&left.mean_y, &right.mean_y),
        mean_l: join_vec(&left.mean_l, &right.mean_l),
        mean_r: join_vec(&left.mean_r, &right.mean_r),
        flat_residual_up: left.flat_residual_up + right.flat_residual_up,
        flat_residual_down: left.flat_residual_down + right.flat_residual_down,
        flat_tol: left.flat_tol.max(right.flat_tol),
        anchor_tol: right.anchor_tol,
        anchor: right.anchor,
        trace,
    })
}

/// Picard fixed point of the mean-reflected equation, splitting the horizon
/// into halves (solved right to left) wherever the measured contraction is
/// too weak or the iteration stalls.
pub fn picard_solve<T: Real>(problem: &Problem<'_, T>) -> Result<MRSolution<T>> {
    let cfg = problem.config;
    if problem.generator.mode() == GeneratorMode::QuadraticZ && problem.envelope.is_none() {
        return Err(Error::invalid("quadratic generators require a linear envelope"));
    }
    if problem.terminal.len() != problem.bm.particles() {
        return Err(Error::invalid("terminal length does not match the particle count"));
    }
    check_feasible(problem.losses, problem.bm.grid().horizon(), problem.terminal, cfg)?;
    let mut ctx = Context { problem, trace: PicardTrace::default() };
    let last = problem.bm.nodes() - 1;
    let mut sol = ctx.solve_window(0, last, problem.terminal)?;
    ctx.trace.converged = ctx.trace.windows.iter().filter(|w| !w.split).all(|w| w.converged);
    sol.trace = ctx.trace;
    Ok(sol)
}

/// Result of the total-variation guard on every Picard iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvGuardReport<T> {
    /// `(force_variation, bound)` per iterate, in trace order.
    pub rows: Vec<(T, T)>,
    pub min_slack: T,
    pub holds: bool,
}

/// Checks `TV(K^m) <= Var(p/b) + Var(q/b) + 2 Var(E[y^m]) + dist(a^m, [q/b, p/b](T))`
/// for every iterate, with the variations taken over each iterate's window.
/// The last term covers an anchor outside the envelope band at the
/// window end.
pub fn kt_variation_guard<T: Real>(
    trace: &PicardTrace<T>,
    envelope: &LinearEnvelope<T>,
    grid: &TimeGrid<T>,
    tv_tol: T,
) -> Result<TvGuardReport<T>> {
    let mut rows = Vec::with_capacity(trace.records.len());
    let mut min_slack = T::infinity();
    for rec in &trace.records {
        let wgrid = if rec.window == (0, grid.steps()) { grid.clone() } else { grid.window(rec.window.0, rec.window.1)? };
        let (vp, vq) = envelope.ratio_variations(&wgrid);
        let (lo, hi) = envelope.band_at(wgrid.horizon());
        let dist = (lo - rec.anchor).max(rec.anchor - hi).max(T::zero());
        let bound = vp + vq + T::lit(2.0) * rec.inner_mean_variation + dist;
        min_slack = min_slack.min(bound - rec.force_variation);
        rows.push((rec.force_variation, bound));
    }
    if rows.is_empty() {
        min_slack = T::zero();
    }
    Ok(TvGuardReport { rows, min_slack, holds: min_slack >= -tv_tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn clamp_scenario(c: f64) -> Scenario<f64> {
        Scenario {
            horizon: 1.0,
            steps: 20,
            particles: 4000,
            rng: RngSpec::new(3),
            terminal: TerminalSpec::Brownian { scale: 1.0, shift: 0.0 },
            generator: Generator::constant(c),
            losses: LossPair::band(-1.0, 2.0).unwrap(),
            envelope: None,
            obstacles: None,
            config: SolverConfig::default(),
        }
    }

    #[test]
    fn inactive_constraints_leave_inner_solution() {
        let sc = clamp_scenario(0.0);
        let smp = sc.sample().unwrap();
        let p = sc.problem(&smp);
        let driver = Ensemble::zeros(smp.bm.grid().clone(), sc.particles);
        let sol = solve_constant_driver(&p, &driver).unwrap();
        assert!(sol.k.values().iter().all(|&v| v == 0.0));
        assert_eq!(sol.y, sol.inner_y);
    }

    #[test]
    fn constant_driver_clamps_the_mean() {
        let sc = clamp_scenario(4.0);
        let smp = sc.sample().unwrap();
        let p = sc.problem(&smp);
        let sol = picard_solve(&p).unwrap();
        let g = build_grid(1.0, 20).unwrap();
        let a = stats::mean(&smp.terminal);
        for (k, &t) in g.nodes().iter().enumerate() {
            let expected = (a + 4.0 * (1.0 - t)).min(2.0);
            assert!((sol.mean_y[k] - expected).abs() < 1e-9, "node {k}: {} vs {expected}", sol.mean_y[k]);
        }
        assert!((sol.k.last() - (-(2.0 - a - 4.0))).abs() < 1e-9 || sol.k.last() < 0.0);
        assert!(sol.flat_ok());
        assert_eq!(sol.trace.iterations(), 1);
        assert!(sol.trace.converged);
    }

    #[test]
    fn infeasible_terminal_is_reported() {
        let mut sc = clamp_scenario(0.0);
        sc.terminal = TerminalSpec::Constant(5.0);
        let smp = sc.sample().unwrap();
        let err = picard_solve(&sc.problem(&smp)).unwrap_err();
        assert_eq!(err.reason(), "infeasible-terminal");
    }

    #[test]
    fn quadratic_needs_envelope() {
        let mut sc = clamp_scenario(0.0);
        sc.generator = Generator::quadratic(1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(sc.validate().is_err());
    }
}
