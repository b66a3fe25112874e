mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leadsync::network::Topology;
use leadsync::tuners::TunerKind;
use thiserror::Error;

use commands::{Overrides, SweepOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("empty grid")]
    EmptyGrid,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Parse(_) | CliError::EmptyGrid => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

/// Leader-following adaptive control simulator.
///
/// Flags take precedence over config-file values, which take precedence
/// over built-in defaults.
#[derive(Parser)]
#[command(name = "leadsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Record every N-th integration step (overrides `sim.stride`).
    #[arg(long)]
    stride: Option<usize>,
    /// Seed for randomized topologies (overrides `network.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check plants, leader and network; exit 0 iff every check passes.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one scenario (a config file or a run manifest).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a topology x m x tuner grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated topologies (overrides `sweep.topologies`).
        #[arg(long, value_delimiter = ',')]
        topologies: Option<Vec<Topology>>,
        /// Comma-separated agent counts (overrides `sweep.m`).
        #[arg(long = "m", value_delimiter = ',')]
        m: Option<Vec<usize>>,
        /// Comma-separated tuners (overrides `sweep.tuners`).
        #[arg(long, value_delimiter = ',')]
        tuners: Option<Vec<TunerKind>>,
        /// Also write every cell's trace.
        #[arg(long)]
        traces: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => commands::cmd_validate(&config),
        Command::Simulate { config, common } => {
            let overrides = Overrides { stride: common.stride, seed: common.seed };
            commands::cmd_simulate(config.as_deref(), &common.out, &overrides).map(|_| ())
        }
        Command::Sweep { config, common, workers, topologies, m, tuners, traces } => {
            let overrides = Overrides { stride: common.stride, seed: common.seed };
            let opts = SweepOptions { topologies, m, tuners, workers, traces };
            commands::cmd_sweep(config.as_deref(), &common.out, &overrides, &opts).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("leadsync: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
