//! Config-driven experiment pipeline around `forgetmi`:
//! `gen-data → train → split → unlearn → eval → report`.
//!
//! Every command reads one JSON [`ExperimentConfig`]; stage seeds are
//! derived from its global `seed`, so any stage can be re-run on its own
//! and reproduce its outputs byte for byte.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, Method, StageSeeds, WeightsSpec};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "forgetmi", version, about = "Forget-MI multimodal unlearning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/test data.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the original model on the full training split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select the forget patients.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run Forget-MI or a baseline starting from og.ckpt.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to evaluate (default: ul.ckpt in the config's out_dir).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Reference checkpoint for the model distance, usually the retrained model.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Output directory (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the metrics.json of several run directories as CSV.
    Report {
        /// Accepted for symmetry with the other verbs; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory to write report.csv into (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Executes one parsed command and returns its summary line(s).
pub fn run(cli: Cli) -> CliResult<String> {
    use commands as c;
    let load = |p: &PathBuf| ExperimentConfig::load(p);
    match cli.command {
        Command::GenData { config, out } => c::gen_data(&load(&config)?, out.as_deref()),
        Command::Train { config, out } => c::train(&load(&config)?, out.as_deref()),
        Command::Split { config, out } => c::split(&load(&config)?, out.as_deref()),
        Command::Unlearn { config, out } => c::unlearn(&load(&config)?, out.as_deref()),
        Command::Eval {
            config,
            model,
            reference,
            out,
        } => c::eval(&load(&config)?, model.as_deref(), reference.as_deref(), out.as_deref()),
        Command::Report { config, out, runs } => {
            if let Some(p) = config {
                load(&p)?;
            }
            c::report(&runs, out.as_deref())
        }
    }
}
