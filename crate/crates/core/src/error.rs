use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the network engine, penalties, pruning and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid prune plan: {0}")]
    InvalidPlan(String),

    #[error("degenerate layer {layer}: {detail}")]
    Degenerate { layer: usize, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },

    #[error("dataset {path}: {detail} at byte offset {offset}")]
    Dataset {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("checkpoint: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated payload at byte offset {offset}")]
    TruncatedPayload { offset: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
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

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
