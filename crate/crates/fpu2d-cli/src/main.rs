//! `fpu2d`: construct and verify KdV-like solitary waves in two-dimensional
//! FPU lattices.
//!
//! Exit codes: 0 success, 2 configuration error, 3 assumption failure,
//! 4 nonconvergence.

mod commands;
mod config;
mod csvio;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Runner;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "fpu2d", version, about = "Solitary lattice waves in the KdV regime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config; FPU2D_OUT overrides both).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent (alpha, eps) jobs
    /// (FPU2D_THREADS overrides).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the propagation angle and tabulate the macroscopic constants.
    Analyze,
    /// Evaluate the wave-existence assumptions for the requested angles.
    Check,
    /// Construct wave profiles for every requested (alpha, eps).
    Solve,
    /// Run the convergence-rate study and optional dynamics cross-check.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("fpu2d: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let config_path = cli
        .config
        .ok_or_else(|| anyhow::anyhow!("--config <path> is required"))?;
    let cfg = RunConfig::from_path(&config_path)?;
    let out = std::env::var_os("FPU2D_OUT")
        .map(PathBuf::from)
        .or(cli.out)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let threads = std::env::var("FPU2D_THREADS")
        .ok()
        .and_then(|t| t.parse().ok())
        .unwrap_or(cli.threads);
    let runner = Runner::new(cfg, out, threads)?;
    let code = match cli.command {
        Command::Analyze => runner.analyze()?,
        Command::Check => runner.check()?,
        Command::Solve => runner.solve()?,
        Command::Verify => runner.verify()?,
    };
    Ok(code as u8)
}

/// Map error kinds onto the documented exit codes.
fn classify(err: &anyhow::Error) -> u8 {
    use fpu2d_core::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::IntegratorStep(_)) => 2,
        Some(Error::Genericity { .. }) => 3,
        Some(Error::NonConvergence { .. })
        | Some(Error::BallEscape { .. })
        | Some(Error::LinearSolve { .. })
        | Some(Error::Domain(_)) => 4,
        Some(Error::InternalCheck(_)) => 1,
        // config-file/IO problems
        None => 2,
    }
}
