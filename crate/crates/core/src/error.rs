use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("model not identifiable: {0}")]
    Identifiability(String),

    #[error("riccati iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    RiccatiNonConvergence { iterations: usize, residual: f64 },

    #[error("plant diverged at step {step}")]
    Divergence { step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Process exit code for the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::DimensionMismatch { .. }
            | Error::NotPositiveDefinite(_)
            | Error::Config(_) => 2,
            Error::Singular(_) | Error::RiccatiNonConvergence { .. } => 3,
            Error::Identifiability(_) => 4,
            Error::Io { .. } | Error::Csv { .. } => 5,
            Error::Divergence { .. } => 6,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
