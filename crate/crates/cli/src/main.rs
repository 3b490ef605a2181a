//! `ghi`: fit, simulate, score and report the hourly irradiation model.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use commands::{DataError, Run, SeedMissing};
use config::{ConfigError, RunConfig};
use ghi_core::ErrorClass;

#[derive(Parser)]
#[command(name = "ghi", version, about = "Bounded beta-copula scenarios for hourly irradiation")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation and scoring.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit bounds, marginals, copulas and daily models on the learn years.
    Fit,
    /// Generate scenario years from the fitted artifacts.
    Simulate {
        /// `<variant>-<family>` (e.g. C2-gumbel), `HS` or `DA`.
        #[arg(long)]
        model: Option<String>,
    },
    /// Score scenario sets against the test years.
    Score {
        /// Scenario set directories; defaults to every set under `<out>/scenarios`.
        sets: Vec<PathBuf>,
        /// Score sets produced by different fits together.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Plot-data CSVs: envelope, copula table, quantile dependence, paths.
    Report,
    /// Emit the synthetic dataset and its generating bundle.
    Synth,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<SeedMissing>() {
            return 2;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<ghi_core::Error>() {
            return match e.class() {
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            };
        }
    }
    3
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let path = cli.config.ok_or_else(|| ConfigError("--config is required".into()))?;
    let cfg = RunConfig::load(&path)?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(ConfigError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| ConfigError(e.to_string()))?;
    }
    let run = Run::new(cfg, cli.out, cli.seed);
    match cli.command {
        Command::Fit => commands::fit(&run),
        Command::Simulate { model } => commands::simulate(&run, model.as_deref()),
        Command::Score { sets, allow_mixed } => commands::score(&run, &sets, allow_mixed),
        Command::Report => commands::report(&run),
        Command::Synth => commands::synth(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
