//! Library side of the `excursion` command-line tool: CSV ingestion for
//! long-format MRT data, run configuration, mode dispatch, and report
//! emission. The binary in `main.rs` is a thin wrapper that maps errors to
//! exit codes.

pub mod config;
pub mod report;
pub mod runner;
pub mod schema;

use thiserror::Error;

/// CLI-level error classes; each maps to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::NonConvergence(_) => 5,
        }
    }
}

impl From<excursion_core::Error> for CliError {
    fn from(e: excursion_core::Error) -> Self {
        use excursion_core::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Structure(_) | E::Validation(_) | E::Positivity { .. } => {
                CliError::Data(e.to_string())
            }
            E::NonFinite { .. } | E::Numeric(_) | E::SingularJacobian(_) => {
                CliError::Numeric(e.to_string())
            }
            E::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
