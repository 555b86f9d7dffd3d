//! Experiment pipeline behind the `regent` binary: demo generation,
//! preprocessing, pretraining, finetuning, evaluation sweeps, bound checks
//! and CSV reports, all driven by one TOML file.

use std::path::PathBuf;

pub mod artifacts;
pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration; the process exits with status 2.
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("missing artifact {0} (run `regent {1}` first)")]
    MissingArtifact(PathBuf, &'static str),
    #[error("cannot access {0}")]
    Io(PathBuf, #[source] std::io::Error),
}
