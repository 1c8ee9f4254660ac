//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// `Config` and `Hypothesis` map to CLI exit code 2; everything else is a
/// computation-level failure.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix factorization failed (non-symmetric, non-positive-definite, singular).
    #[error("factorization error: {0}")]
    Factorization(String),

    /// Invalid configuration (bad sizes, missing keys, inconsistent options).
    #[error("configuration error: {0}")]
    Config(String),

    /// A theorem hypothesis is violated by the supplied spec/parameters.
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    /// A caller contract was broken (e.g. subordination applied to a non-Gaussian path).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Function evaluation produced a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
