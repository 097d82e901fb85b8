//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Oracles here are written independently of the library: the explicit
//! two-sided reflection formula, closed-form BSDE solutions, the clamp
//! profile and an RK4 integration of the penalized mean equation.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use meanreflect::bsde::{solve_bsde, Generator, RegressionConfig};
use meanreflect::constraints::ConstantBand;
use meanreflect::diagnostics::trace_contraction;
use meanreflect::grid::{build_grid, simulate_brownian, RngSpec, SamplePath};
use meanreflect::mrbsde::{kt_variation_guard, MRSolution};
use meanreflect::penalty::solve_penalized;
use meanreflect::skorokhod::solve_sp;
use meanreflect::stats;
use meanreflect_cli::config::{GeneratorConfig, InitConfig, ScenarioConfig};
use meanreflect_cli::run::{cmd_run, execute_run, RunOptions};
use meanreflect_cli::sweep::{default_levels, execute_sweep};
use meanreflect_cli::verify::{run_suite, CheckResult, SolverSet, SuiteReport, DEFAULT_SEED};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).expect("scenario file")
}

fn solve(cfg: &ScenarioConfig) -> Result<MRSolution<f64>, String> {
    let seed = cfg.resolve_seed(None).map_err(|e| e.to_string())?;
    execute_run(cfg, seed).map(|r| r.solution).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn suites(name: &str) -> Result<Vec<SuiteReport>, String> {
    run_suite(name, &SolverSet::default(), DEFAULT_SEED).map_err(|e| e.to_string())
}

fn failing(checks: &[&CheckResult]) -> Result<(), String> {
    match checks.iter().find(|c| !c.passed()) {
        None => Ok(()),
        Some(c) => Err(format!("{}: {} failures, worst {:e}", c.name, c.failures, c.worst)),
    }
}

/// `psi_t - max(min((psi_0 - a)^+, inf_{u<=t} psi), sup_{s<=t} min(psi_s - a, inf_{[s,t]} psi))`
/// for reflection on `[0, a]`. The inner infimum is carried along a
/// backward scan over `s`, so each node costs O(t).
fn two_sided_reflection(psi: &[f64], a: f64) -> Vec<f64> {
    let mut inf_to_t = f64::INFINITY;
    (0..psi.len())
        .map(|t| {
            inf_to_t = inf_to_t.min(psi[t]);
            let head = (psi[0] - a).max(0.0).min(inf_to_t);
            let mut inf_st = f64::INFINITY;
            let mut sup = f64::NEG_INFINITY;
            for s in (0..=t).rev() {
                inf_st = inf_st.min(psi[s]);
                sup = sup.max((psi[s] - a).min(inf_st));
            }
            psi[t] - head.max(sup)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let mut secs = 0.0;
    let m = 2048;
    let grid = Arc::new(build_grid(1.0, m).unwrap());
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let lo: f64 = rng.random_range(-2.0..0.0);
        let hi = lo + rng.random_range(0.2..3.0);
        let step = rng.random_range(0.5..5.0) * (hi - lo) / (m as f64).sqrt();
        let mut v = vec![rng.random_range(lo - 1.0..hi + 1.0)];
        for _ in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            v.push(v.last().unwrap() + step * z);
        }
        let s = SamplePath::new(grid.clone(), v.clone()).unwrap();
        let started = Instant::now();
        let sol = solve_sp(&s, &ConstantBand { nodes: m + 1, lo, hi }).map_err(|e| e.to_string())?;
        secs += started.elapsed().as_secs_f64();
        let psi: Vec<f64> = v.iter().map(|x| x - lo).collect();
        let oracle = two_sided_reflection(&psi, hi - lo);
        for (o, x) in oracle.iter().zip(sol.x.values()) {
            worst = worst.max((o + lo - x).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max gap {worst:e}"))?;
    // solver time only; the O(M^2) oracle is excluded
    ensure(secs <= 10.0, || format!("solves took {secs:.2} s"))?;
    Ok(format!("200 walks, M = 2048, max gap {worst:.2e}, solves {secs:.3} s"))
}

fn criterion_2() -> Outcome {
    let reports = suites("all")?;
    let flat: Vec<&CheckResult> =
        reports.iter().flat_map(|r| r.checks.iter()).filter(|c| c.name == "flatness").collect();
    failing(&flat)?;
    let mut count: usize = flat.iter().map(|c| c.instances).sum();
    let mut worst = flat.iter().map(|c| c.worst).fold(0.0, f64::max);
    let mut runs = vec![load("clamp.json"), load("picard_short.json"), load("quadratic_envelope.json")];
    let mut negative = load("quadratic_envelope.json");
    negative.generator = GeneratorConfig::Quadratic { gamma: 1.0, y: 0.0, mean_y: 0.3, constant: -6.0 };
    runs.push(negative);
    for cfg in &runs {
        let sol = solve(cfg)?;
        // input of the mean reflection: s_k = E[inner_0] - E[inner_k]
        let m = sol.inner_y.mean_path();
        let s0 = m.first();
        let tol = 1e-10 * (1.0 + m.values().iter().map(|v| (s0 - v).abs()).fold(0.0, f64::max));
        let res = sol.flat_residual_up.max(sol.flat_residual_down);
        ensure(res <= tol, || format!("{:?}: residual {res:e} above {tol:e}", cfg.name))?;
        worst = worst.max(res / tol);
        count += 1;
    }
    Ok(format!("{count} solves, worst residual {worst:.2e} of tolerance"))
}

fn criterion_3() -> Outcome {
    let reports = suites("reversal")?;
    let checks: Vec<&CheckResult> = reports[0].checks.iter().filter(|c| c.name != "flatness").collect();
    failing(&checks)?;
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    ensure(checks.iter().all(|c| c.instances == 100 && c.tolerance <= 1e-12), || "suite shape changed".into())?;
    Ok(format!("{} identities on 100 instances, worst {worst:.2e}", checks.len()))
}

fn criterion_4() -> Outcome {
    let reports = suites("skorokhod")?;
    let names = [
        "continuity-forward",
        "continuity-backward",
        "comparison",
        "total-variation-forward",
        "total-variation-backward",
    ];
    let mut checks = Vec::new();
    for n in names {
        let c = reports[0].checks.iter().find(|c| c.name == n).ok_or(format!("missing check {n}"))?;
        ensure(c.instances == 100 && c.tolerance <= 1e-9, || format!("{n}: suite shape changed"))?;
        checks.push(c);
    }
    failing(&checks)?;
    let worst = checks.iter().map(|c| c.worst).fold(f64::INFINITY, f64::min);
    Ok(format!("{} suites x 100 instances, worst slack {worst:.2e}", checks.len()))
}

fn criterion_5() -> Outcome {
    let (n, m) = (100_000, 50);
    let g = Arc::new(build_grid(1.0, m).unwrap());
    let reg = RegressionConfig::default();
    let bm = simulate_brownian::<f64>(&g, n, &RngSpec::new(11)).map_err(|e| e.to_string())?;
    let xi = bm.cross_section(m).to_vec();
    let band = 4.0 * stats::std_dev(&xi) / (n as f64).sqrt();

    // f = 0, xi = B_T: y = B_t, z = 1
    let sol = solve_bsde(&xi, &Generator::zero(), &bm, &reg).map_err(|e| e.to_string())?;
    let (mut mean_err, mut z_err) = (0.0f64, 0.0f64);
    for k in 0..=m {
        let (y, b) = (sol.y.cross_section(k), bm.cross_section(k));
        mean_err = mean_err.max((stats::mean(y) - stats::mean(b)).abs());
        if k < m {
            let z = sol.z.cross_section(k);
            z_err = z_err.max((z.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / n as f64).sqrt());
        }
    }
    ensure(mean_err <= band, || format!("f = 0: mean error {mean_err:e} above {band:e}"))?;
    ensure(z_err <= 0.05, || format!("f = 0: z error {z_err:e}"))?;

    // f = a y: y = e^{a(T - t)} B_t
    let a = 0.5;
    let sol = solve_bsde(&xi, &Generator::linear(a, 0.0, 0.0, 0.0, 0.0), &bm, &reg).map_err(|e| e.to_string())?;
    let mut lin_err = 0.0f64;
    for k in 0..=m {
        let factor = (a * (1.0 - g.time(k))).exp();
        lin_err = lin_err.max((stats::mean(sol.y.cross_section(k)) - factor * stats::mean(bm.cross_section(k))).abs());
    }
    ensure(lin_err <= band, || format!("f = a y: mean error {lin_err:e} above {band:e}"))?;

    // f = (gamma/2) z^2: y_0 = log E[exp(gamma xi)] / gamma
    let gamma = 1.0;
    let bm = simulate_brownian::<f64>(&g, 200_000, &RngSpec::new(13)).map_err(|e| e.to_string())?;
    let xi: Vec<f64> = bm.cross_section(m).iter().map(|b| b.sin()).collect();
    let oracle = (xi.iter().map(|x| (gamma * x).exp()).sum::<f64>() / xi.len() as f64).ln() / gamma;
    let gen = Generator::quadratic(gamma, 0.0, 0.0, 0.0).map_err(|e| e.to_string())?;
    let sol = solve_bsde(&xi, &gen, &bm, &RegressionConfig::with_degree(5)).map_err(|e| e.to_string())?;
    let rel = ((stats::mean(sol.y.cross_section(0)) - oracle) / oracle).abs();
    ensure(rel <= 0.01, || format!("quadratic: relative error {rel:e}"))?;
    Ok(format!("z error {z_err:.3}, mean errors {mean_err:.1e}/{lin_err:.1e} (band {band:.1e}), Cole-Hopf rel {rel:.1e}"))
}

fn criterion_6() -> Outcome {
    let cfg = load("clamp.json");
    let sol = solve(&cfg)?;
    let seed = cfg.resolve_seed(None).unwrap();
    let sampled = cfg.to_scenario(seed).unwrap().sample().map_err(|e| e.to_string())?;
    let grid = sol.grid();
    let dt = grid.max_dt();
    let tol = dt.max(4.0 * stats::std_dev(&sampled.terminal) / (cfg.particles as f64).sqrt());
    let mut worst = 0.0f64;
    for (k, &t) in grid.nodes().iter().enumerate() {
        worst = worst.max((sol.mean_y[k] - (4.0 * (1.0 - t)).min(2.0)).abs());
    }
    ensure(worst <= tol, || format!("sup error {worst:e} above {tol:e}"))?;
    let kt = sol.k.last();
    ensure((kt + 2.0).abs() <= 0.02, || format!("K_T = {kt}"))?;
    Ok(format!("sup error {worst:.2e} (tol {tol:.2e}), K_T = {kt:.4}"))
}

fn criterion_7() -> Outcome {
    let cfg = load("picard_short.json");
    ensure(cfg.solver.picard_tol == 1e-6 && cfg.horizon == 0.1, || "scenario drifted".into())?;
    let a = solve(&cfg)?;
    let tr = &a.trace;
    ensure(tr.converged && tr.iterations() <= 20, || format!("iterations {}, converged {}", tr.iterations(), tr.converged))?;
    let last = *tr.distances().last().unwrap();
    ensure(last <= 1e-6, || format!("final distance {last:e}"))?;
    let ratios = trace_contraction(tr).ratios;
    ensure(!ratios.is_empty() && ratios.iter().all(|r| *r < 1.0), || format!("ratios {ratios:?}"))?;
    ensure(a.total_variation() > 0.0, || "constraint never binds".into())?;
    let mut other = cfg.clone();
    other.solver.init = InitConfig::Unreflected;
    let b = solve(&other)?;
    let gap = a.y.sup_rms_gap(&b.y);
    ensure(gap <= 2e-6, || format!("initializations differ by {gap:e}"))?;
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(format!("{} iterations, max ratio {max_ratio:.3}, init gap {gap:.2e}", tr.iterations()))
}

/// RK4 for `-dm/dt = 10 + n (l - m)^+ - n (m - r)^+`, `m_1 = 0`, `l = -2t`, `r = 2t`.
fn rk4_mean(n: f64, steps: usize) -> Vec<f64> {
    let sub = 1000;
    let h = 1.0 / (steps * sub) as f64;
    let rhs = |t: f64, m: f64| 10.0 + n * (-2.0 * t - m).max(0.0) - n * (m - 2.0 * t).max(0.0);
    let mut out = vec![0.0; steps + 1];
    let mut m = 0.0;
    for k in (0..steps).rev() {
        for j in 0..sub {
            let t = (k + 1) as f64 / steps as f64 - j as f64 * h;
            let k1 = rhs(t, m);
            let k2 = rhs(t - h / 2.0, m + h / 2.0 * k1);
            let k3 = rhs(t - h / 2.0, m + h / 2.0 * k2);
            let k4 = rhs(t - h, m + h * k3);
            m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out[k] = m;
    }
    out
}

fn criterion_8() -> Outcome {
    let mut cfg = load("penalty_ode.json");
    let seed = cfg.resolve_seed(None).unwrap();
    let sweep_cfg = cfg.clone();
    cfg.particles = 100_000;
    let sc = cfg.to_scenario(seed).map_err(|e| e.to_string())?;
    let sampled = sc.sample().map_err(|e| e.to_string())?;
    let floor = stats::mean(&sampled.terminal).abs();
    let mut ode_err = 0.0f64;
    for n in [4.0, 16.0, 64.0, 256.0, 512.0] {
        let sol = solve_penalized(&sc, &sampled, n).map_err(|e| e.to_string())?;
        let oracle = rk4_mean(n, cfg.steps);
        let err = sol.mean_y.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ode_err = ode_err.max((err - floor).max(0.0));
    }
    ensure(ode_err <= 1e-3, || format!("ODE mismatch {ode_err:e}"))?;

    let res = execute_sweep(&sweep_cfg, seed, &default_levels()).map_err(|e| e.to_string())?;
    let sw = &res.sweep;
    ensure(sw.rows.len() == 8 && sw.rows[0].n == 4.0 && sw.rows[7].n == 512.0, || "levels changed".into())?;
    ensure(sw.rows.windows(2).all(|w| w[1].error < w[0].error), || "error not monotone".into())?;
    let slope = sw.fit.as_ref().ok_or("no rate fit")?.slope;
    ensure(slope <= -0.3, || format!("slope {slope}"))?;
    let column: Vec<f64> = sw.rows.iter().map(|r| r.bounded_upper.max(r.bounded_lower)).collect();
    let top = column.iter().cloned().fold(0.0, f64::max);
    // bounded: the n^2-weighted column levels off instead of growing with n
    ensure(top.is_finite() && top <= 2.0 * column[0].max(1.0), || format!("boundedness column {column:?}"))?;
    let tail_growth = column[7] / column[6];
    ensure(tail_growth < 1.05, || format!("column still growing: {column:?}"))?;
    Ok(format!("ODE gap {ode_err:.1e}, slope {slope:.3}, bounded column <= {top:.1}"))
}

fn criterion_9() -> Outcome {
    let mut rows = 0;
    let mut min_slack = f64::INFINITY;
    for constant in [6.0, -6.0] {
        let mut cfg = load("quadratic_envelope.json");
        cfg.generator = GeneratorConfig::Quadratic { gamma: 1.0, y: 0.0, mean_y: 0.3, constant };
        let seed = cfg.resolve_seed(None).unwrap();
        let sc = cfg.to_scenario(seed).map_err(|e| e.to_string())?;
        let env = sc.envelope.clone().ok_or("scenario lacks an envelope")?;
        let grid = Arc::new(build_grid(cfg.horizon, cfg.steps).unwrap());
        // L' = x - 3, R' = x - 1
        let pair = env.loss_pair();
        for &t in grid.nodes() {
            for x in [-2.0, 0.5, 4.0] {
                let exact = pair.lower_at(t, x) == x - 3.0 && pair.upper_at(t, x) == x - 1.0;
                ensure(exact, || "envelope is not x-3 / x-1".into())?;
            }
        }
        let sol = solve(&cfg)?;
        ensure(sol.total_variation() > 0.1, || format!("constant {constant}: constraint never binds"))?;
        let report = kt_variation_guard(&sol.trace, &env, &grid, 1e-6).map_err(|e| e.to_string())?;
        for (tv, bound) in &report.rows {
            min_slack = min_slack.min(bound + 1e-6 - tv);
        }
        ensure(report.rows.iter().all(|(tv, bound)| *tv <= bound + 1e-6), || format!("{report:?}"))?;
        rows += report.rows.len();
    }
    Ok(format!("{rows} iterates, min slack {min_slack:.3}"))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1, 4, 8] {
        let out = dir.path().join(format!("t{threads}"));
        let opts = RunOptions { out: Some(out.clone()), seed: Some(31), threads: Some(threads) };
        cmd_run(&scenario_path("clamp.json"), &opts).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(out.join("result.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs.iter().all(|o| o == &outputs[0]), || "CSV differs across thread counts".into())?;
    Ok(format!("{} bytes identical for 1, 4, 8 threads", outputs[0].len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("reflection map matches the explicit two-sided formula", criterion_1),
        ("flat residuals within 1e-10 (1 + sup|s|)", criterion_2),
        ("backward/forward reversal identities", criterion_3),
        ("continuity, comparison and variation inequalities", criterion_4),
        ("BSDE closed forms", criterion_5),
        ("constant-driver clamp", criterion_6),
        ("Picard convergence and uniqueness", criterion_7),
        ("penalization against the ODE oracle and sweep", criterion_8),
        ("quadratic total-variation guard", criterion_9),
        ("thread-count determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
