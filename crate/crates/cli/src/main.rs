//! `qgd`: configuration-driven solves, convergence studies and diagnostics.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 CFL refusal, 4 blow-up.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("cfl: {0}")]
    Cfl(String),
    #[error("blow-up: {0}")]
    Blowup(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Cfl(_) => 3,
            CliError::Blowup(_) => 4,
        }
    }
}

macro_rules! other_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Other(e.to_string())
            }
        }
    )*};
}

other_from!(
    qgd_core::grid::GridError,
    qgd_core::fem::FemError,
    qgd_core::cem::CemError,
    qgd_core::qgd::QgdError,
    qgd_core::analysis::AnalysisError
);

#[derive(Parser)]
#[command(name = "qgd", version, about = "CEM-GMsFEM leapfrog solver for u_t + α u_tt − ∇·(κ∇u) = f")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One multiscale run, optionally compared with the fine reference.
    Solve(Common),
    /// Convergence table over (H, m) rows and α columns.
    Study(Common),
    /// Localization decay, inverse constant and CFL boundary scan.
    Diagnose(Common),
    /// Write the configured permeability field as a raster.
    Field(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Validate and print derived quantities without solving.
    #[arg(long)]
    dry_run: bool,
    /// Run even when the CFL condition fails.
    #[arg(long)]
    allow_unstable: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Evaluate only the first K study cells.
    #[arg(long, value_name = "K")]
    max_cells: Option<usize>,
    /// Output directory (overrides output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Fail instead of choosing a suffixed directory when the output exists.
    #[arg(long)]
    refuse_existing: bool,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (Command::Solve(common) | Command::Study(common) | Command::Diagnose(common) | Command::Field(common)) = &cli.command;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let loaded = config::load(&common.config)?;
    let opts = commands::Opts {
        dry_run: common.dry_run,
        allow_unstable: common.allow_unstable,
        max_cells: common.max_cells,
        out: common.out.clone(),
        refuse_existing: common.refuse_existing,
    };
    match &cli.command {
        Command::Solve(_) => commands::solve(&loaded, &opts),
        Command::Study(_) => commands::study(&loaded, &opts),
        Command::Diagnose(_) => commands::diagnose(&loaded, &opts),
        Command::Field(_) => commands::field(&loaded, &opts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
