use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("ill-posed plan: denominator vanishes at frequency bin ({row}, {col})")]
    IllPosed { row: usize, col: usize },

    #[error("numeric consistency: {0}")]
    NumericConsistency(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("iteration diverged at step {step}: norm {norm:e} exceeds bound {bound:e}")]
    Diverged { step: usize, norm: f64, bound: f64 },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad numbers rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericConsistency(_)
                | Error::NumericFailure(_)
                | Error::Diverged { .. }
                | Error::IllPosed { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
