//! `eqlab`: complexity accounting, channel simulation, equalizer training,
//! topology sweeps and latency benchmarks from one binary.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eqlab_core::Error;

/// Process exit codes. Clap's own usage errors exit with 2.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const MISSING_INPUT: u8 = 3;
    pub const BAD_CONFIG: u8 = 4;
    pub const INFEASIBLE: u8 = 5;
    pub const DIVERGED: u8 = 6;
    pub const NUMERICAL: u8 = 7;
}

#[derive(Parser)]
#[command(
    name = "eqlab",
    version,
    about = "Performance-versus-complexity workbench for NN equalizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer and total real multiplications per symbol of a model config.
    Rmps(commands::RmpsArgs),
    /// Simulate a link and write a train/test dataset.
    Simulate(commands::SimulateArgs),
    /// Train a twin-network equalizer on a dataset.
    Train(commands::TrainArgs),
    /// Score a trained equalizer on a dataset's test frame.
    Evaluate(commands::EvaluateArgs),
    /// Budget-constrained random search over families and budgets.
    Sweep(commands::SweepArgs),
    /// Inference latency against RMpS decades.
    Bench(commands::BenchArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => exit::MISSING_INPUT,
        Error::Config(_)
        | Error::Layer { .. }
        | Error::Shape { .. }
        | Error::Format(_)
        | Error::Json(_) => exit::BAD_CONFIG,
        Error::Infeasible(_) => exit::INFEASIBLE,
        Error::Diverged { .. } | Error::AllTrialsFailed { .. } => exit::DIVERGED,
        Error::Numerical(_) => exit::NUMERICAL,
        Error::Io(_) => exit::FAILURE,
    }
}

/// `EQLAB_WORKERS` sizes the worker pool. It changes speed only.
fn configure_workers() -> Result<(), String> {
    let Ok(v) = std::env::var("EQLAB_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("EQLAB_WORKERS={v:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_workers() {
        eprintln!("eqlab: {msg}");
        return ExitCode::from(exit::BAD_CONFIG);
    }
    let result = match cli.command {
        Command::Rmps(a) => commands::rmps(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("eqlab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
