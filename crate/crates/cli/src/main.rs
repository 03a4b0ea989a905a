//! Command-line front end for the `emofuse` crate.
//!
//! Four subcommands cover the full workflow:
//!
//! * `gen-synth` — write a synthetic feature dataset with controllable
//!   class separability, useful for end-to-end sanity runs.
//! * `train` — run speaker-independent cross-validation from a TOML run
//!   config and write all artifacts (resolved config, fold plan, summary,
//!   report, restartable checkpoints) into a run directory.
//! * `evaluate` — score a manifest with a trained checkpoint.
//! * `report` — render one or more finished runs as a comparison table.
//!
//! Exit codes: `0` success, `2` configuration problem (bad flags, bad TOML,
//! incompatible architecture), `3` data problem (missing or malformed
//! files), `4` numeric failure during training or evaluation.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use thiserror::Error;

/// Top-level failure classes, each tied to a stable process exit code so
/// scripts can tell misconfiguration from bad data from numeric blow-ups.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid flags, config file contents, or architecture settings.
    #[error("{0}")]
    Config(String),
    /// Unreadable, malformed, or missing data and artifact files.
    #[error("{0}")]
    Data(String),
    /// Non-finite values encountered while training or evaluating.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// The process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "emofuse",
    version,
    about = "Multi-task audio/text emotion recognition: synthesize data, train, evaluate, report"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic feature dataset and its manifest.
    GenSynth(commands::GenSynthArgs),
    /// Train under the speaker-independent 10-fold protocol.
    Train(commands::TrainArgs),
    /// Score a manifest with a trained checkpoint.
    Evaluate(commands::EvaluateArgs),
    /// Render finished runs as a comparison table.
    Report(commands::ReportArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(args) => commands::gen_synth(&args),
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Report(args) => commands::report(&args),
    };

    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
