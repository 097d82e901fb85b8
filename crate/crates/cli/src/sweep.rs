//! `meanreflect sweep-penalty`: penalization levels against the reflected limit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use meanreflect::penalty::{penalty_sweep, PenaltySweep};

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::run::{fmt_num, with_threads, RunOptions};

pub const SWEEP_HEADER: &str = "n,error,total_variation,violation_upper,violation_lower,bounded_upper,bounded_lower";

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub seed: u64,
    pub csv: String,
    pub summary: Value,
    pub sweep: PenaltySweep<f64>,
}

/// `4, 8, ..., 512`.
pub fn default_levels() -> Vec<f64> {
    (2..=9).map(|p| f64::from(1u32 << p)).collect()
}

pub fn render_sweep_csv(sweep: &PenaltySweep<f64>) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in &sweep.rows {
        let cells = [
            r.n,
            r.error,
            r.total_variation,
            r.violation_upper,
            r.violation_lower,
            r.bounded_upper,
            r.bounded_lower,
        ];
        let cells: Vec<String> = cells.iter().map(|v| fmt_num(*v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn execute_sweep(cfg: &ScenarioConfig, seed: u64, ns: &[f64]) -> Result<SweepResult, CliError> {
    let sc = cfg.to_scenario(seed)?;
    let sampled = sc.sample()?;
    let sweep = penalty_sweep(&sc, &sampled, ns)?;
    let bounded_max = sweep.rows.iter().map(|r| r.bounded_upper.max(r.bounded_lower)).fold(0.0, f64::max);
    let summary = json!({
        "schema": "meanreflect/penalty-sweep-v1",
        "seed": seed,
        "levels": ns,
        "fit": sweep.fit,
        "error_monotone": sweep.error_monotone,
        "violation_monotone": sweep.violation_monotone,
        "noise_band": sweep.noise_band,
        "bounded_max": bounded_max,
        "reference_mean": sweep.reference_mean,
    });
    Ok(SweepResult { seed, csv: render_sweep_csv(&sweep), summary, sweep })
}

pub fn cmd_sweep_penalty(config: &Path, ns: &[f64], opts: &RunOptions) -> Result<SweepResult, CliError> {
    let cfg = ScenarioConfig::load(config)?;
    let seed = cfg.resolve_seed(opts.seed)?;
    let result = with_threads(opts.threads, || execute_sweep(&cfg, seed, ns))??;
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("penalty_sweep.csv"), &result.csv)?;
    let text = serde_json::to_string_pretty(&result.summary).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out.join("penalty_sweep.json"), text + "\n")?;
    Ok(result)
}
