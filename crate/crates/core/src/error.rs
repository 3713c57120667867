//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Structural problems: dimension mismatches, missing follow-up
    /// columns, ragged inputs that do not line up.
    #[error("structural error: {0}")]
    Structure(String),

    /// Data values violating an invariant (non-binary indicators,
    /// treatment at an unavailable decision point, non-monotone
    /// cumulative sub-outcomes, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Randomization probability outside (0,1) at an available decision
    /// point that enters a required weight factor.
    #[error("positivity violated for individual {individual} at decision point {t}: p = {prob}")]
    Positivity {
        individual: usize,
        t: usize,
        prob: f64,
    },

    /// Non-finite intermediate in an estimating-function evaluation.
    #[error("non-finite value for individual {individual} at decision point {t} while {context}")]
    NonFinite {
        individual: usize,
        t: usize,
        context: String,
    },

    /// Generic numeric failure not tied to one observation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The Newton iteration exhausted its budget.
    #[error(
        "solver did not converge after {iterations} iterations (residual sup-norm {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Last iterate, stacked (alpha, beta), for diagnostics.
        last_iterate: Vec<f64>,
    },

    /// Singular (or numerically singular) Jacobian / bread matrix.
    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    /// Invalid configuration (solver, generative model, inference).
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
