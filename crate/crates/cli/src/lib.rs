//! The `chorus` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod report;

pub use config::{PipelineArgs, PipelineConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or inputs named on the command line.
    Usage(String),
    /// Anything that failed while doing the work.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    pub fn runtime(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {err}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    chorus_core::Error,
    chorus_core::dsp::DspError,
    chorus_core::trainstore::StoreError,
    chorus_core::knn::KnnError,
    chorus_ingest::IngestError,
    csv::Error,
    serde_json::Error
);

#[derive(Debug, Parser)]
#[command(name = "chorus", version, about = "Bird-sound species identification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the recording archive and write a manifest.
    Ingest(commands::IngestArgs),
    /// Build a balanced training store from a TRAIN manifest.
    BuildStore(commands::BuildStoreArgs),
    /// Rank species for WAV recordings.
    Classify(commands::ClassifyArgs),
    /// Per-class AUC, accuracy@N and MRR@N on a TEST manifest.
    Eval(commands::EvalArgs),
    /// Rejection curve and accuracy@N / MRR@N tables on a TEST manifest.
    Sweep(commands::EvalArgs),
    /// Write a seeded synthetic dataset with TRAIN and TEST manifests.
    Synth(commands::SynthArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::BuildStore(a) => commands::build_store(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

/// Directory containing `path`, for resolving relative manifest entries.
pub(crate) fn parent_dir(path: &std::path::Path) -> PathBuf {
    path.parent().map(PathBuf::from).unwrap_or_default()
}
