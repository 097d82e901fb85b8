use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use meanreflect_cli::error::CliError;
use meanreflect_cli::run::{cmd_run, with_threads, RunOptions};
use meanreflect_cli::sweep::{cmd_sweep_penalty, default_levels};
use meanreflect_cli::verify::{run_suite, SolverSet, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(name = "meanreflect", version, about = "Mean-reflected BSDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario; writes result.csv and diagnostics.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Penalized solves over a list of levels; writes penalty_sweep.{csv,json}.
    SweepPenalty {
        config: PathBuf,
        /// Comma-separated penalization levels (default 4,8,...,512).
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Randomized property suites: oracle, reversal, skorokhod or all.
    Verify {
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, threads } => {
            let out = out.unwrap_or_else(|| PathBuf::from("out"));
            let opts = RunOptions { out: Some(out.clone()), seed, threads };
            let result = cmd_run(&config, &opts)?;
            for w in result.diagnostics["warnings"].as_array().into_iter().flatten() {
                eprintln!("warning: {}", w.as_str().unwrap_or_default());
            }
            println!("seed {}: wrote {}", result.seed, out.display());
        }
        Command::SweepPenalty { config, ns, out, seed, threads } => {
            let out = out.unwrap_or_else(|| PathBuf::from("out"));
            let ns = ns.unwrap_or_else(default_levels);
            let opts = RunOptions { out: Some(out.clone()), seed, threads };
            let result = cmd_sweep_penalty(&config, &ns, &opts)?;
            print!("{}", result.csv);
            println!("seed {}: wrote {}", result.seed, out.display());
        }
        Command::Verify { suite, seed, threads } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let reports = with_threads(threads, || run_suite(&suite, &SolverSet::default(), seed))??;
            let mut failed = Vec::new();
            for r in &reports {
                for line in r.lines() {
                    println!("{line}");
                }
                if !r.passed() {
                    failed.push(r.suite.clone());
                }
            }
            if !failed.is_empty() {
                return Err(CliError::VerifyFailed(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
