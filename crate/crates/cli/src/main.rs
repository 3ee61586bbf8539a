//! `qfeedback`: training and evaluation of autoencoder links with
//! quantized loss feedback.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{ExperimentConfig, MissingConfig, Overrides};

#[derive(Parser)]
#[command(name = "qfeedback", version, about = "End-to-end learning with quantized loss feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of outer training iterations.
    #[arg(short = 'N', long = "outer-iterations")]
    outer_iterations: Option<usize>,
    /// Overrides `output_dir` and the QFEEDBACK_OUTPUT_DIR variable.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Directory holding tx.json and rx.json; defaults to the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a transmitter/receiver pair and write checkpoints and metrics.
    Train(Common),
    /// SER over a list of SNR or power points.
    SerSweep(WithCheckpoint),
    /// Receiver decisions on a grid plus the constellation.
    DecisionRegions(WithCheckpoint),
    /// Monte Carlo checks of the gradient scaling results on a checkpoint.
    Verify(WithCheckpoint),
    /// Bussgang gain and residual statistics for Gaussian losses.
    Bussgang(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    ExperimentConfig::load(
        &common.config,
        &Overrides {
            seed: common.seed,
            outer_iterations: common.outer_iterations,
            output_dir: common.output_dir.clone(),
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => commands::train(&load(&c)?),
        Command::SerSweep(w) => commands::ser_sweep(&load(&w.common)?, w.checkpoint.as_deref()),
        Command::DecisionRegions(w) => commands::regions(&load(&w.common)?, w.checkpoint.as_deref()),
        Command::Verify(w) => commands::verify(&load(&w.common)?, w.checkpoint.as_deref()),
        Command::Bussgang(c) => commands::bussgang(&load(&c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<MissingConfig>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
