//! `dectd`: generate models, run and verify decentralized TD(0) experiments.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("bound verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::MissingArtifacts(_) | CliError::Runtime(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<dectd_core::Error> for CliError {
    fn from(e: dectd_core::Error) -> Self {
        use dectd_core::Error;
        match e {
            Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            Error::RunFailed { run, source } => match *source {
                Error::Diverged { step } => CliError::Diverged(format!("run {run} diverged at step {step}")),
                other => CliError::Runtime(format!("run {run} failed: {other}")),
            },
            Error::InvalidConfig { .. } | Error::Parse(_) | Error::DimMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dectd", version, about = "Decentralized TD(0) policy evaluation: experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config file; defaults reproduce the 30-agent, 100-state setup.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set training.alpha=0.005` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Experiment seed (overrides config and `--set`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo runs (overrides config and `--set`).
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print every theoretical constant of the generated model.
    Constants(Common),
    /// Run the Monte Carlo experiment and write per-run and aggregate CSVs.
    Run(Common),
    /// Run the experiment and check every applicable bound.
    Verify(Common),
    /// Plateau of the averaged error for several step sizes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', value_name = "A1,A2,...")]
        alphas: Vec<f64>,
    },
    /// Turn the traces of a run directory into plot-ready CSVs.
    ExportPlot {
        /// Directory written by `dectd run`.
        #[arg(long, value_name = "DIR")]
        run_dir: PathBuf,
        /// Output directory (defaults to the run directory).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Constants(c) => commands::constants(&c),
        Command::Run(c) => commands::run(&c),
        Command::Verify(c) => commands::verify(&c),
        Command::Sweep { common, alphas } => commands::sweep(&common, &alphas),
        Command::ExportPlot { run_dir, out } => commands::export_plot(&run_dir, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
