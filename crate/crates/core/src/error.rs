use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GlaError>;

#[derive(Debug, Error)]
pub enum GlaError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: input outside domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("unknown tape value id {0}")]
    UnknownVar(usize),

    #[error("missing mandatory file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GlaError {
    /// True for errors caused by user input or configuration rather than an
    /// internal inconsistency.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            GlaError::Invariant(_) | GlaError::NonFinite { .. } | GlaError::TapeConsumed
        )
    }
}
