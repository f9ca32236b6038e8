use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by how a caller should react: configuration problems,
/// I/O problems, and numerical failures. [`Error::category`] exposes that grouping.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("resume mismatch in {path}: {reason}")]
    ResumeMismatch { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Coarse error classes, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Configuration,
    Io,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Format { .. } => ErrorCategory::Io,
            Error::DegenerateInput(_) | Error::Infeasible(_) | Error::Numerical(_) => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Configuration,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
