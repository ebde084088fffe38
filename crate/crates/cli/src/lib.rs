//! Command-line driver: `synth`, `train`, `eval`, `transfer` and `bench`,
//! all driven by one JSON run configuration.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use flowattn::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "flowattn",
    version,
    about = "Self-attention anomaly detection for network flow records"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (for `synth`, a `.csv` path is also accepted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed overriding every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic flow CSV.
    Synth,
    /// Train on benign windows; writes checkpoint.json and curve.csv.
    Train,
    /// Calibrate a threshold and report metrics; writes report.json and sweep.csv.
    Eval {
        /// Defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on target domains; writes checkpoint.json and curve.csv.
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time repeated scoring passes; writes timing.json.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides eval.repetitions.
        #[arg(long)]
        repetitions: Option<usize>,
    },
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Schema(_) | Error::EmptyInput(_) | Error::Csv(_) => 2,
        Error::Divergence { .. } => 3,
        Error::Mismatch(_) | Error::Shape { .. } => 4,
        _ => 1,
    }
}

/// Runs one command and returns its summary line.
pub fn run(cli: &Cli) -> Result<String> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = RunConfig::load(config_path, cli.seed)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output location: pass --out or set `out` in the config".into()))?;
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg, &out),
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Eval { checkpoint } => commands::cmd_eval(&cfg, &out, checkpoint.as_deref()),
        Command::Transfer { checkpoint } => commands::cmd_transfer(&cfg, &out, checkpoint.as_deref()),
        Command::Bench {
            checkpoint,
            repetitions,
        } => commands::cmd_bench(&cfg, &out, checkpoint.as_deref(), *repetitions),
    }
}
