//! Command-line front end: `solve`, `sweep` and `check` on experiment configs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 non-convergence or too
//! few valid rows for a rate fit, 3 a condition check failed.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    ConditionFailed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::ConditionFailed(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<sparsereg::Error> for CliError {
    fn from(e: sparsereg::Error) -> Self {
        use sparsereg::Error as E;
        match e {
            E::InsufficientData { .. } => CliError::Numerical(e.to_string()),
            E::GenerationFailed { .. }
            | E::SourceConditionViolated { .. }
            | E::InvalidSubgradient(_)
            | E::BoundInapplicable(_) => CliError::ConditionFailed(e.to_string()),
            E::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparsereg", version, about = "Sparse Tikhonov regularization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve once at a given noise level; writes solution.csv and report.json.
    Solve(SolveArgs),
    /// Run a noise-level sweep; writes sweep.csv, rate.json and rate.svg.
    Sweep(CommonArgs),
    /// Check the rate conditions; writes check.json.
    Check(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for problem and noise (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sampling and sweeps.
    #[arg(long, env = "SPARSEREG_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Noise level (overrides `solve.delta`).
    #[arg(long)]
    pub delta: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<String, CliError> {
    let common = match command {
        Command::Solve(a) => &a.common,
        Command::Sweep(a) | Command::Check(a) => a,
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let task = || match command {
        Command::Solve(a) => commands::solve(&cfg, &out, a.delta),
        Command::Sweep(_) => commands::sweep(&cfg, &out),
        Command::Check(_) => commands::check(&cfg, &out),
    };
    match common.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(task),
        None => task(),
    }
}
