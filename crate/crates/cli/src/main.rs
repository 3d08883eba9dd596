//! `seirdiff`: simulate, optimize and verify S/E/I/R diffusion scenarios.
//!
//! Exit codes: 0 ok, 2 unreadable or malformed config, 3 invalid config,
//! 4 solver failure, 5 optimizer failure, 6 failed verification check,
//! 1 anything else (e.g. output I/O).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seirdiff_core::Error;

#[derive(Debug, Parser)]
#[command(name = "seirdiff", version, about = "S/E/I/R reaction-diffusion simulation and diffusion control")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory for result files (created if missing).
    #[arg(long, global = true, default_value = "seirdiff-out")]
    output_dir: PathBuf,

    /// Overrides the seed of the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress and summary messages.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the forward model with the scenario's diffusion.
    Simulate { config: PathBuf },
    /// Optimize the diffusion controls, then simulate at the optimum.
    Optimize { config: PathBuf },
    /// Run numerical self-checks.
    Verify {
        config: PathBuf,
        /// Checks to run (comma separated), or `all`.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        check: Vec<String>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Io(String),
    Unconverged(String),
    Verification(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(Error::Parse { .. }) => 2,
            Failure::Core(Error::Config(_) | Error::Domain(_) | Error::Usage(_)) => 3,
            Failure::Core(Error::Solver { .. }) => 4,
            Failure::Core(Error::Optimization { .. }) | Failure::Unconverged(_) => 5,
            Failure::Verification(_) => 6,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Io(m) => format!("i/o error: {m}"),
            Failure::Unconverged(m) => m.clone(),
            Failure::Verification(failed) => format!("verification failed: {}", failed.join(", ")),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::Context {
        output_dir: cli.output_dir,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Simulate { config } => commands::simulate(&ctx, config),
        Command::Optimize { config } => commands::optimize(&ctx, config),
        Command::Verify { config, check } => commands::verify(&ctx, config, check),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("seirdiff: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
