//! `gradsel`: experiment driver.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand};
use commands::Ctx;
use config::{ExperimentConfig, Overrides};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gradsel", version, about = "Gradient-estimated demonstration selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset (dataset.json, components.json).
    GenTask,
    /// Train or initialise a model (model.json, training_trace.csv).
    TrainModel,
    /// Compare estimated and exact subset losses (estimate_*.csv).
    Estimate,
    /// Run one selection method (selection.json).
    Select,
    /// Train/test loss of every method over a k sweep (evaluate.csv).
    Evaluate,
    /// Model-evaluation cost of each estimator against its oracle (bench_flops.csv).
    BenchFlops,
    /// Loss and query-loss Hessian trace per method (hessian.csv).
    Hessian,
    /// Print the effective config as JSON.
    ShowConfig,
}

fn run(cli: &Cli) -> Result<(), io::Failure> {
    let cfg = ExperimentConfig::load(&cli.overrides)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", String::from_utf8_lossy(&io::to_json(&cfg)?).trim_end());
        return Ok(());
    }
    let ctx = Ctx::new(cfg)?;
    match cli.command {
        Command::GenTask => commands::gen_task(&ctx),
        Command::TrainModel => commands::train_model(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Select => commands::select(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::BenchFlops => commands::bench_flops(&ctx),
        Command::Hessian => commands::hessian(&ctx),
        Command::ShowConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gradsel: {f}");
            ExitCode::from(f.code)
        }
    }
}
