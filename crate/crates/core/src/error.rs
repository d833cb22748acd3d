use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the recognition engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("state error: {0}")]
    State(String),
    #[error("alphabet error: {0}")]
    Alphabet(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible target: label {label:?} needs more than {frames} frames")]
    InfeasibleTarget { label: Vec<u32>, frames: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("storage error at {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
}

/// Failures specific to reading or writing checkpoint files.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("config digest mismatch: file has {found:016x}, expected {expected:016x}")]
    Digest { found: u64, expected: u64 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}
