//! Experiment harness for the force-constrained dressing study: TOML
//! configuration, the episode grid, trajectory and dataset files, the
//! training/collection/evaluation pipelines, reporting and the CLI.

pub mod cli;
pub mod config;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] fcvp_core::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing checkpoint '{0}' (pass --checkpoint {0}=<path>)")]
    MissingCheckpoint(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: schema version {found} is not supported (expected {expected})")]
    Schema {
        path: String,
        line: usize,
        found: u64,
        expected: u32,
    },
    #[error("{0}: no rows")]
    NoRows(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}
