//! `meanreflect verify`: randomized property suites for the reflection maps.
//!
//! The solvers under test are injected, so a deliberately broken solver can
//! be shown to fail the same suites.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use meanreflect::constraints::{ConstantBand, NodeBoundary, Reversed};
use meanreflect::grid::{SamplePath, TimeGrid};
use meanreflect::skorokhod::{
    check_backward_continuity_bound, check_continuity_bound, check_tv_bound, check_tv_bound_backward, reverse_input,
    solve_bsp, solve_reversed, solve_sp, BackwardReflectionSolution, ReflectionConfig, ReflectionSolution,
};
use meanreflect::Result;

use crate::error::CliError;

pub type ForwardSolver = fn(&SamplePath<f64>, &dyn NodeBoundary<f64>) -> Result<ReflectionSolution<f64>>;
pub type BackwardSolver = fn(&SamplePath<f64>, f64, &dyn NodeBoundary<f64>) -> Result<BackwardReflectionSolution<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct SolverSet {
    pub forward: ForwardSolver,
    pub backward: BackwardSolver,
}

fn library_forward(s: &SamplePath<f64>, bp: &dyn NodeBoundary<f64>) -> Result<ReflectionSolution<f64>> {
    solve_sp(s, bp)
}

fn library_backward(s: &SamplePath<f64>, a: f64, bp: &dyn NodeBoundary<f64>) -> Result<BackwardReflectionSolution<f64>> {
    solve_bsp(s, a, bp)
}

impl Default for SolverSet {
    fn default() -> Self {
        Self { forward: library_forward, backward: library_backward }
    }
}

pub const SUITES: [&str; 3] = ["oracle", "reversal", "skorokhod"];
pub const DEFAULT_SEED: u64 = 0x5EED_2024;

/// Bound checks pass with slack at least `-SLACK_TOL`.
pub const SLACK_TOL: f64 = 1e-9;
pub const ORACLE_TOL: f64 = 1e-10;
pub const REVERSAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Larger is better; passes when `worst >= -tolerance`.
    Slack,
    /// Smaller is better; passes when `worst <= tolerance`.
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub measure: Measure,
    pub worst: f64,
    pub tolerance: f64,
    /// First solver error, if any instance failed to solve.
    pub error: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self, suite: &str) -> String {
        let (label, cmp) = match self.measure {
            Measure::Slack => ("worst slack", format!(">= -{:e}", self.tolerance)),
            Measure::Error => ("worst error", format!("<= {:e}", self.tolerance)),
        };
        let mut line = format!(
            "{} {}/{}: {} instances, {} failures, {} {:.3e} ({})",
            if self.passed() { "PASS" } else { "FAIL" },
            suite,
            self.name,
            self.instances,
            self.failures,
            label,
            self.worst,
            cmp
        );
        if let Some(e) = &self.error {
            line.push_str(&format!(" [{e}]"));
        }
        line
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks.iter().map(|c| c.line(&self.suite)).collect()
    }
}

/// Per-instance metric, or `None` if the instance counts as failed outright.
type Outcome = std::result::Result<f64, String>;

fn collect(name: &str, measure: Measure, tolerance: f64, outcomes: Vec<Outcome>) -> CheckResult {
    let mut worst = match measure {
        Measure::Slack => f64::INFINITY,
        Measure::Error => 0.0,
    };
    let mut failures = 0;
    let mut error = None;
    for o in &outcomes {
        match o {
            Ok(v) => {
                let ok = match measure {
                    Measure::Slack => {
                        worst = worst.min(*v);
                        *v >= -tolerance
                    }
                    Measure::Error => {
                        worst = worst.max(*v);
                        *v <= tolerance
                    }
                };
                if !ok || !v.is_finite() {
                    failures += 1;
                }
            }
            Err(e) => {
                failures += 1;
                error.get_or_insert_with(|| e.clone());
            }
        }
    }
    CheckResult { name: name.to_string(), instances: outcomes.len(), failures, measure, worst, tolerance, error }
}

fn instance_rng(seed: u64, suite: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ suite.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(i as u64);
    rng
}

fn grid(steps: usize) -> Arc<TimeGrid<f64>> {
    Arc::new(TimeGrid::uniform(1.0, steps).expect("valid grid"))
}

/// Gaussian random walk with total spread `scale`, started at `s0`.
fn random_walk(rng: &mut ChaCha8Rng, g: &Arc<TimeGrid<f64>>, s0: f64, scale: f64) -> SamplePath<f64> {
    let m = g.steps();
    let step = scale / (m as f64).sqrt();
    let mut v = Vec::with_capacity(m + 1);
    v.push(s0);
    for _ in 0..m {
        let z: f64 = rng.sample(StandardNormal);
        v.push(v.last().unwrap() + step * z);
    }
    SamplePath::new(g.clone(), v).expect("aligned")
}

/// Nonlinear boundary with known band edges:
/// `l = (x - hi_k) + bl sin(x - hi_k) + shift_l`,
/// `r = (x - lo_k) + br tanh(x - lo_k) - shift_r`, `|bl|, |br| <= 1/2`.
#[derive(Debug, Clone)]
struct WavyBoundary {
    times: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    bl: f64,
    br: f64,
    shift_l: f64,
    shift_r: f64,
}

impl WavyBoundary {
    fn random(rng: &mut ChaCha8Rng, g: &TimeGrid<f64>) -> Self {
        let centre = rng.random_range(-1.0..1.0);
        let amp = rng.random_range(0.0..1.0);
        let freq = rng.random_range(0.5..4.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let width = rng.random_range(0.5..2.0);
        let breathe = rng.random_range(0.0..0.2);
        let times = g.nodes().to_vec();
        let mid: Vec<f64> = times.iter().map(|t| centre + amp * (freq * std::f64::consts::TAU * t + phase).sin()).collect();
        let half: Vec<f64> = times.iter().map(|t| 0.5 * width * (1.0 + breathe * (3.0 * t).cos())).collect();
        Self {
            lo: mid.iter().zip(&half).map(|(m, h)| m - h).collect(),
            hi: mid.iter().zip(&half).map(|(m, h)| m + h).collect(),
            times,
            bl: rng.random_range(-0.5..0.5),
            br: rng.random_range(-0.5..0.5),
            shift_l: 0.0,
            shift_r: 0.0,
        }
    }

    /// A nearby boundary: edges moved by up to `eps`, shapes perturbed.
    fn perturbed(&self, rng: &mut ChaCha8Rng, eps: f64) -> Self {
        let mut out = self.clone();
        let dl = rng.random_range(-eps..eps);
        let dh = rng.random_range(-eps..eps);
        out.lo.iter_mut().for_each(|v| *v += dl);
        out.hi.iter_mut().for_each(|v| *v += dh);
        out.bl = (self.bl + rng.random_range(-0.1..0.1)).clamp(-0.5, 0.5);
        out.br = (self.br + rng.random_range(-0.1..0.1)).clamp(-0.5, 0.5);
        out
    }

    /// `l` raised by `dl >= 0`, `r` lowered by `dr >= 0`: a narrower band.
    fn narrowed(&self, dl: f64, dr: f64) -> Self {
        Self { shift_l: self.shift_l + dl, shift_r: self.shift_r + dr, ..self.clone() }
    }

    fn min_width(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min)
    }
}

impl NodeBoundary<f64> for WavyBoundary {
    fn node_count(&self) -> usize {
        self.times.len()
    }
    fn time(&self, node: usize) -> f64 {
        self.times[node]
    }
    fn l(&self, node: usize, x: f64) -> f64 {
        let u = x - self.hi[node];
        u + self.bl * u.sin() + self.shift_l
    }
    fn r(&self, node: usize, x: f64) -> f64 {
        let u = x - self.lo[node];
        u + self.br * u.tanh() - self.shift_r
    }
    fn slope_bounds(&self) -> (f64, f64) {
        let b = self.bl.abs().max(self.br.abs());
        (1.0 - b, 1.0 + b)
    }
}

fn x_samples() -> Vec<f64> {
    (0..=80).map(|i| -6.0 + 12.0 * i as f64 / 80.0).collect()
}

fn flat_outcome(sol: &ReflectionSolution<f64>) -> Outcome {
    // residual measured in units of its tolerance, so the check is `<= 1`
    let worst = sol.flat_residual_up.max(sol.flat_residual_down);
    Ok(worst / sol.flat_tol)
}

/// Explicit two-sided reflection of `psi` on `[0, a]`:
/// `psi_t - max( min((psi_0 - a)^+, inf_{u<=t} psi_u),
///               sup_{s<=t} min(psi_s - a, inf_{s<=u<=t} psi_u) )`.
pub fn explicit_double_reflection(psi: &[f64], a: f64) -> Vec<f64> {
    let n = psi.len();
    let mut out = Vec::with_capacity(n);
    let first = (psi[0] - a).max(0.0);
    let mut running_inf = f64::INFINITY;
    for t in 0..n {
        running_inf = running_inf.min(psi[t]);
        let head = first.min(running_inf);
        let mut sup = f64::NEG_INFINITY;
        let mut inf_st = f64::INFINITY;
        for s in (0..=t).rev() {
            inf_st = inf_st.min(psi[s]);
            sup = sup.max((psi[s] - a).min(inf_st));
        }
        out.push(psi[t] - head.max(sup));
    }
    out
}

fn oracle_suite(solvers: &SolverSet, seed: u64) -> Vec<CheckResult> {
    const INSTANCES: usize = 200;
    const STEPS: usize = 2048;
    let g = grid(STEPS);
    let results: Vec<(Outcome, Outcome)> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 1, i);
            let lo = rng.random_range(-2.0..0.0);
            let hi = lo + rng.random_range(0.2..3.0);
            let s0 = rng.random_range(lo - 1.0..hi + 1.0);
            let scale = rng.random_range(0.5..5.0) * (hi - lo);
            let s = random_walk(&mut rng, &g, s0, scale);
            let band = ConstantBand { nodes: STEPS + 1, lo, hi };
            match (solvers.forward)(&s, &band) {
                Ok(sol) => {
                    let psi: Vec<f64> = s.values().iter().map(|v| v - lo).collect();
                    let oracle = explicit_double_reflection(&psi, hi - lo);
                    let gap = oracle
                        .iter()
                        .zip(sol.x.values())
                        .map(|(o, x)| (o + lo - x).abs())
                        .fold(0.0, f64::max);
                    (Ok(gap), flat_outcome(&sol))
                }
                Err(e) => (Err(e.to_string()), Err(e.to_string())),
            }
        })
        .collect();
    let (gaps, flats): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    vec![
        collect("explicit-formula", Measure::Error, ORACLE_TOL, gaps),
        collect("flatness", Measure::Error, 1.0, flats),
    ]
}

fn random_backward_instance(
    rng: &mut ChaCha8Rng,
) -> (Arc<TimeGrid<f64>>, SamplePath<f64>, WavyBoundary, f64) {
    let steps = rng.random_range(16..512);
    let g = grid(steps);
    let bp = WavyBoundary::random(rng, &g);
    let (s0, scale) = (rng.random_range(-1.0..1.0), rng.random_range(0.5..4.0));
    let s = random_walk(rng, &g, s0, scale);
    let (lo, hi) = (bp.lo[steps], bp.hi[steps]);
    let a = lo + rng.random_range(0.05..0.95) * (hi - lo);
    (g, s, bp, a)
}

fn reversal_suite(solvers: &SolverSet, seed: u64) -> Vec<CheckResult> {
    const INSTANCES: usize = 100;
    let cfg = ReflectionConfig::default();
    let results: Vec<[Outcome; 5]> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 2, i);
            let (_, s, bp, a) = random_backward_instance(&mut rng);
            let m = s.len() - 1;
            let sv = s.values();
            let twice = reverse_input(&reverse_input(&s, a), sv[0]);
            let round_trip = Ok(twice.sup_gap(&s));
            let rr = Reversed::new(&bp);
            let rrr = Reversed::new(&rr);
            let xs = x_samples();
            let mut boundary_gap: f64 = 0.0;
            for k in 0..=m {
                for &x in &xs {
                    boundary_gap = boundary_gap.max((rrr.l(k, x) - bp.l(k, x)).abs()).max((rrr.r(k, x) - bp.r(k, x)).abs());
                }
                boundary_gap = boundary_gap.max((rrr.time(k) - bp.time(k)).abs());
            }
            let sol = match (solvers.backward)(&s, a, &bp) {
                Ok(sol) => sol,
                Err(e) => {
                    let e = Err(e.to_string());
                    return [round_trip, Ok(boundary_gap), e.clone(), e.clone(), e];
                }
            };
            let (x, k) = (sol.x.values(), sol.k.values());
            let identity = (0..=m)
                .map(|j| (x[j] - (a + sv[m] - sv[j] + k[m] - k[j])).abs())
                .fold((x[m] - a).abs(), f64::max);
            let duality = match solve_reversed(&s, a, &bp, &cfg) {
                Ok(fwd) => {
                    let (fx, fu, fd) = (fwd.x.values(), fwd.push_up.values(), fwd.push_down.values());
                    let (bu, bd) = (sol.push_up.values(), sol.push_down.values());
                    Ok((0..=m)
                        .map(|j| {
                            let r = m - j;
                            (x[j] - fx[r])
                                .abs()
                                .max((bu[m] - bu[j] - fu[r]).abs())
                                .max((bd[m] - bd[j] - fd[r]).abs())
                        })
                        .fold(0.0, f64::max))
                }
                Err(e) => Err(e.to_string()),
            };
            [round_trip, Ok(boundary_gap), Ok(identity), duality, flat_outcome(&sol)]
        })
        .collect();
    let names = ["input-round-trip", "boundary-round-trip", "backward-identity", "forward-duality", "flatness"];
    (0..5)
        .map(|c| {
            let outcomes = results.iter().map(|r| r[c].clone()).collect();
            let tol = if c == 4 { 1.0 } else { REVERSAL_TOL };
            collect(names[c], Measure::Error, tol, outcomes)
        })
        .collect()
}

fn skorokhod_suite(solvers: &SolverSet, seed: u64) -> Vec<CheckResult> {
    const INSTANCES: usize = 100;
    let xs = x_samples();
    let err = |e: meanreflect::Error| e.to_string();

    let continuity: Vec<(Outcome, Outcome)> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 3, i);
            let g = grid(rng.random_range(16..400));
            let bp1 = WavyBoundary::random(&mut rng, &g);
            let bp2 = bp1.perturbed(&mut rng, 0.2);
            let (s0, scale) = (rng.random_range(-2.0..2.0), rng.random_range(0.5..4.0));
            let s1 = random_walk(&mut rng, &g, s0, scale);
            let eps = rng.random_range(0.0..0.3);
            let noise = random_walk(&mut rng, &g, 0.0, eps);
            let s2 = SamplePath::new(g.clone(), s1.values().iter().zip(noise.values()).map(|(a, b)| a + b).collect())
                .expect("aligned");
            let run = || -> std::result::Result<(f64, f64), String> {
                let a = (solvers.forward)(&s1, &bp1).map_err(err)?;
                let b = (solvers.forward)(&s2, &bp2).map_err(err)?;
                let rep = check_continuity_bound(&a, &b, &s1, &s2, &bp1, &bp2, &xs, SLACK_TOL);
                Ok((rep.slack, a.flat_residual_up.max(a.flat_residual_down) / a.flat_tol))
            };
            match run() {
                Ok((slack, flat)) => (Ok(slack), Ok(flat)),
                Err(e) => (Err(e.clone()), Err(e)),
            }
        })
        .collect();

    let tv: Vec<(Outcome, Outcome)> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 4, i);
            let (g, s, bp, a) = random_backward_instance(&mut rng);
            let (s0, scale) = (rng.random_range(-3.0..3.0), rng.random_range(0.5..4.0));
            let fwd_s = random_walk(&mut rng, &g, s0, scale);
            let forward = (solvers.forward)(&fwd_s, &bp).map(|sol| check_tv_bound(&sol, &fwd_s, SLACK_TOL).slack);
            let backward = (solvers.backward)(&s, a, &bp).map(|sol| check_tv_bound_backward(&sol, &s, SLACK_TOL).slack);
            (forward.map_err(err), backward.map_err(err))
        })
        .collect();

    let comparison: Vec<Outcome> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 5, i);
            let g = grid(rng.random_range(16..400));
            let wide = WavyBoundary::random(&mut rng, &g);
            let room = 0.4 * wide.min_width() * wide.slope_bounds().0;
            let narrow = wide.narrowed(rng.random_range(0.0..room), rng.random_range(0.0..room));
            let (s0, scale) = (rng.random_range(-3.0..3.0), rng.random_range(0.5..4.0));
            let s = random_walk(&mut rng, &g, s0, scale);
            let a = (solvers.forward)(&s, &wide).map_err(err)?;
            let b = (solvers.forward)(&s, &narrow).map_err(err)?;
            let gap = |n: &SamplePath<f64>, w: &SamplePath<f64>| {
                n.values().iter().zip(w.values()).map(|(x, y)| x - y).fold(f64::INFINITY, f64::min)
            };
            Ok(gap(&b.push_up, &a.push_up).min(gap(&b.push_down, &a.push_down)))
        })
        .collect();

    let backward_continuity: Vec<Outcome> = (0..INSTANCES)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 6, i);
            let (g, s1, bp1, _) = random_backward_instance(&mut rng);
            let bp2 = bp1.perturbed(&mut rng, 0.1);
            let eps = rng.random_range(0.0..0.3);
            let noise = random_walk(&mut rng, &g, 0.0, eps);
            let s2 = SamplePath::new(g.clone(), s1.values().iter().zip(noise.values()).map(|(a, b)| a + b).collect())
                .expect("aligned");
            let m = g.steps();
            let common_lo = bp1.lo[m].max(bp2.lo[m]);
            let common_hi = bp1.hi[m].min(bp2.hi[m]);
            let a1 = common_lo + rng.random_range(0.1..0.9) * (common_hi - common_lo);
            let a2 = common_lo + rng.random_range(0.1..0.9) * (common_hi - common_lo);
            let x = (solvers.backward)(&s1, a1, &bp1).map_err(err)?;
            let y = (solvers.backward)(&s2, a2, &bp2).map_err(err)?;
            Ok(check_backward_continuity_bound(&x, &y, &s1, &s2, &bp1, &bp2, &xs, SLACK_TOL).slack)
        })
        .collect();

    let (cont, cont_flat): (Vec<_>, Vec<_>) = continuity.into_iter().unzip();
    let (tv_fwd, tv_bwd): (Vec<_>, Vec<_>) = tv.into_iter().unzip();
    vec![
        collect("continuity-forward", Measure::Slack, SLACK_TOL, cont),
        collect("total-variation-forward", Measure::Slack, SLACK_TOL, tv_fwd),
        collect("total-variation-backward", Measure::Slack, SLACK_TOL, tv_bwd),
        collect("comparison", Measure::Slack, SLACK_TOL, comparison),
        collect("continuity-backward", Measure::Slack, SLACK_TOL, backward_continuity),
        collect("flatness", Measure::Error, 1.0, cont_flat),
    ]
}

/// Runs one suite (or `all`) with the given solvers.
pub fn run_suite(name: &str, solvers: &SolverSet, seed: u64) -> std::result::Result<Vec<SuiteReport>, CliError> {
    let names: Vec<&str> = match name {
        "all" => SUITES.to_vec(),
        n if SUITES.contains(&n) => vec![n],
        other => return Err(CliError::UnknownSuite(other.to_string())),
    };
    Ok(names
        .into_iter()
        .map(|suite| {
            let started = Instant::now();
            let checks = match suite {
                "oracle" => oracle_suite(solvers, seed),
                "reversal" => reversal_suite(solvers, seed),
                _ => skorokhod_suite(solvers, seed),
            };
            SuiteReport { suite: suite.to_string(), checks, seconds: started.elapsed().as_secs_f64() }
        })
        .collect())
}
