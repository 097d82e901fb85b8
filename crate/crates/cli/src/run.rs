//! `meanreflect run`: one Picard solve and its result bundle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use meanreflect::bsde::{check_growth, check_lipschitz};
use meanreflect::constraints::validate_loss;
use meanreflect::diagnostics::{audit_solution, trace_contraction};
use meanreflect::mrbsde::{kt_variation_guard, picard_solve, MRSolution};

use crate::config::ScenarioConfig;
use crate::error::CliError;

pub const CSV_HEADER: &str = "t,mean_Y,mean_L,mean_R,K,push_up,push_down";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub csv: String,
    pub diagnostics: Value,
    pub solution: MRSolution<f64>,
}

/// Runs `f` on a dedicated pool when a thread count is given.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render_csv(sol: &MRSolution<f64>) -> String {
    let mut out = String::with_capacity(sol.mean_y.len() * 160);
    out.push_str(CSV_HEADER);
    out.push('\n');
    let grid = sol.grid();
    for k in 0..sol.mean_y.len() {
        let row = [
            grid.time(k),
            sol.mean_y[k],
            sol.mean_l[k],
            sol.mean_r[k],
            sol.k.values()[k],
            sol.push_up.values()[k],
            sol.push_down.values()[k],
        ];
        let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Solves `cfg` with `seed` in the current thread pool; no file output.
pub fn execute_run(cfg: &ScenarioConfig, seed: u64) -> Result<RunResult, CliError> {
    let sc = cfg.to_scenario(seed)?;
    let started = Instant::now();
    let sampled = sc.sample()?;
    let sample_seconds = started.elapsed().as_secs_f64();
    let sol = picard_solve(&sc.problem(&sampled))?;
    let solve_seconds = started.elapsed().as_secs_f64() - sample_seconds;

    let grid = sampled.bm.grid();
    let sigmas = sc.config.stat_sigmas;
    let audit = audit_solution(&sol, &sc.losses, sigmas);
    let contraction = trace_contraction(&sol.trace);
    let (ymin, ymax) = sol.y.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let xs = linspace(ymin - 1.0, ymax + 1.0, 201);
    let loss_validation = validate_loss(&sc.losses, grid.nodes(), &xs);
    let lipschitz = check_lipschitz(&sc.generator, grid.nodes(), 200, seed)?;
    let growth = check_growth(&sc.generator, grid.nodes(), 200, seed);
    let (tv_guard, ordering) = match &sc.envelope {
        Some(env) => (
            Some(kt_variation_guard(&sol.trace, env, grid, 1e-6)?),
            Some(env.ordering(&sc.losses, grid.nodes(), &xs)),
        ),
        None => (None, None),
    };
    let mut warnings = Vec::new();
    if !loss_validation.passes {
        warnings.push("loss pair fails its declared constants on the sampled range".to_string());
    }
    if !audit.accepted {
        warnings.push("solution fails the joint constraint/flatness audit".to_string());
    }
    if let Some(o) = &ordering {
        if !o.holds(0.0) {
            warnings.push("envelope ordering violated on the sampled range".to_string());
        }
    }
    let mut echo = cfg.clone();
    echo.seed = Some(seed);
    let diagnostics = json!({
        "schema": "meanreflect/run-v1",
        "seed": seed,
        "scenario": echo,
        "nodes": grid.len(),
        "particles": sc.particles,
        "timing": { "sample_seconds": sample_seconds, "solve_seconds": solve_seconds },
        "constraint_violation": audit.violation,
        "flatness": {
            "up": sol.flat_residual_up,
            "down": sol.flat_residual_down,
            "tol": sol.flat_tol,
            "ok": sol.flat_ok(),
        },
        "representation_error": audit.representation_error,
        "total_variation": audit.total_variation,
        "anchor": { "value": sol.anchor, "tol": sol.anchor_tol },
        "audit": audit,
        "picard": sol.trace,
        "contraction": contraction,
        "tv_guard": tv_guard,
        "envelope_ordering": ordering,
        "loss_validation": loss_validation,
        "generator_lipschitz": lipschitz,
        "generator_growth": growth,
        "warnings": warnings,
    });
    Ok(RunResult { seed, csv: render_csv(&sol), diagnostics, solution: sol })
}

pub fn write_bundle(out: &Path, result: &RunResult) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("result.csv"), &result.csv)?;
    let text = serde_json::to_string_pretty(&result.diagnostics).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out.join("diagnostics.json"), text + "\n")?;
    Ok(())
}

pub fn cmd_run(config: &Path, opts: &RunOptions) -> Result<RunResult, CliError> {
    let cfg = ScenarioConfig::load(config)?;
    let seed = cfg.resolve_seed(opts.seed)?;
    let result = with_threads(opts.threads, || execute_run(&cfg, seed))??;
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write_bundle(&out, &result)?;
    Ok(result)
}
