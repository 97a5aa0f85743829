use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Every position of a softmax row is masked.
    #[error("degenerate softmax row: all {0} positions masked")]
    DegenerateRow(usize),

    /// A value that must be finite is not.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Invalid caller input (bad attention row, empty mask, out-of-range token...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Invalid configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// Checkpoint or data file does not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged.
    #[error("loss became NaN at step {step}")]
    NanLoss { step: u64 },

    /// A probe record cannot produce the requested statistic.
    #[error("degenerate record: {0}")]
    DegenerateRecord(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
