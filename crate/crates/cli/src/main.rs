//! Command-line front end: mode tables, forward radii, simulations,
//! scintillation indices, inversion and sensitivity sweeps.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use crate::commands::Output;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "shallowmode", version, about = "Coupled-mode statistics of sound in a random shallow-water waveguide")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    config: PathBuf,
    /// Output directory (overrides the config; defaults to `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Guided-mode table per frequency.
    Modes(Common),
    /// Correlation curves and radii at the array.
    Forward(Common),
    /// Monte Carlo ensemble of mode powers and synthetic snapshots.
    Simulate(Common),
    /// Theoretical and, given snapshots, empirical scintillation indices.
    Scintillation(Common),
    /// Fit seabed parameters to observed radii.
    Invert {
        #[command(flatten)]
        common: Common,
        /// CSV of `freq_hz,radius_m` rows.
        #[arg(long)]
        observed: PathBuf,
    },
    /// One-at-a-time radius sweeps and the log-derivative ranking.
    Sensitivity(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Modes(c) | Command::Forward(c) | Command::Simulate(c) | Command::Scintillation(c) | Command::Sensitivity(c) => c,
        Command::Invert { common, .. } => common,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let dir = common.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = Output::new(dir)?;
    match &cli.command {
        Command::Modes(_) => commands::modes(&cfg, &out),
        Command::Forward(_) => commands::forward(&cfg, &out),
        Command::Simulate(_) => commands::simulate(&cfg, &out),
        Command::Scintillation(_) => commands::scintillation(&cfg, &out),
        Command::Invert { observed, .. } => commands::invert(&cfg, observed, &out),
        Command::Sensitivity(_) => commands::sensitivity_tables(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
