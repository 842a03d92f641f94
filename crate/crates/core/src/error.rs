use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by the command-line driver to
/// pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data.
    Data,
    /// A numerical routine failed (degenerate input, non-convergence).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("sample {sample_id}: {message}")]
    Invariant { sample_id: String, message: String },

    #[error("{0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate variance: input data has zero total variance")]
    DegenerateVariance,

    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("more components than samples ({components} > {samples})")]
    TooManyComponents { components: usize, samples: usize },

    #[error("mixture component {component} collapsed again after re-seeding")]
    ComponentCollapse { component: usize },

    #[error("solver did not converge after {iterations} iterations (violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("empty {0} score set")]
    EmptyScores(&'static str),

    #[error("missing slice: {0}")]
    MissingSlice(String),

    #[error("train/test leakage: {0}")]
    Leakage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DegenerateVariance | Error::ComponentCollapse { .. } | Error::NonConvergence { .. } => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
