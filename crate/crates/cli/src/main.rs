//! Command-line front end: experiment orchestration with deterministic
//! outputs. Exit codes: 0 success, 2 tolerance failure, 3 config error,
//! 4 numeric failure.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug)]
pub struct AppError {
    pub code: i32,
    pub message: String,
}

impl AppError {
    pub fn config(message: String) -> Self {
        Self { code: 3, message }
    }

    pub fn numeric(message: String) -> Self {
        Self { code: 4, message }
    }

    /// Core errors raised while building the run (before compute) are
    /// configuration problems.
    pub fn from_config_stage(e: icalab::Error) -> Self {
        Self::config(e.to_string())
    }

    /// Core errors raised mid-computation.
    pub fn from_compute(e: icalab::Error) -> Self {
        Self::numeric(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "icalab",
    version,
    about = "Online ICA at finite n and its scaling limit: simulation, ODE/PDE solvers, and cross-validation metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides run.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trial/particle parallelism (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-n online ICA trials.
    Simulate(RunArgs),
    /// Order-parameter ODE.
    Ode(RunArgs),
    /// Coupled Fokker-Planck solve.
    Pde(RunArgs),
    /// Decoupled scalar particles driven by a solved (Q, R) path.
    Decoupled(RunArgs),
    /// Simulation vs theory with tolerance bands (exit 2 on violation).
    Compare(RunArgs),
    /// Support-recovery ROC, simulation vs PDE prediction.
    Roc(RunArgs),
    /// Fixed points and critical step size of the cubic-family dynamics.
    Bifurcation(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Simulate(_) => "simulate",
            Self::Ode(_) => "ode",
            Self::Pde(_) => "pde",
            Self::Decoupled(_) => "decoupled",
            Self::Compare(_) => "compare",
            Self::Roc(_) => "roc",
            Self::Bifurcation(_) => "bifurcation",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Self::Simulate(a)
            | Self::Ode(a)
            | Self::Pde(a)
            | Self::Decoupled(a)
            | Self::Compare(a)
            | Self::Roc(a)
            | Self::Bifurcation(a) => a,
        }
    }
}

fn run() -> Result<i32, AppError> {
    let cli = Cli::parse();
    let started = Instant::now();
    let args = cli.command.args();

    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| AppError::config(format!("thread pool: {e}")))?;
    }

    let config_text = std::fs::read_to_string(&args.config).map_err(|e| {
        AppError::config(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let parsed = config::RunConfig::parse(&config_text)?;
    let resolved = parsed.resolve(args.out.as_deref(), args.seed)?;

    let result = match &cli.command {
        Command::Simulate(_) => commands::cmd_simulate(&resolved)?,
        Command::Ode(_) => commands::cmd_ode(&resolved)?,
        Command::Pde(_) => commands::cmd_pde(&resolved)?,
        Command::Decoupled(_) => commands::cmd_decoupled(&resolved)?,
        Command::Compare(_) => commands::cmd_compare(&resolved)?,
        Command::Roc(_) => commands::cmd_roc(&resolved)?,
        Command::Bifurcation(_) => commands::cmd_bifurcation(&resolved)?,
    };
    let code = commands::finish(
        &resolved,
        cli.command.name(),
        &args.config.display().to_string(),
        config_text,
        started,
        result,
    )?;
    println!(
        "{}: wrote {} (exit {code})",
        cli.command.name(),
        resolved.out_dir.display()
    );
    Ok(code)
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}
