use std::fmt;

use crnn_core::Error;

/// A command failure, classified by process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config values or missing inputs (exit 2).
    Usage(String),
    /// Unreadable or malformed datasets, images, lexicons and reports (exit 3).
    Data(String),
    /// Checkpoint files that cannot be decoded or do not fit (exit 4).
    Checkpoint(String),
    /// Anything that indicates a bug rather than bad input (exit 1).
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Checkpoint(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }

    /// Reclassifies any engine error raised while reading a checkpoint.
    pub fn checkpoint(err: Error) -> Self {
        Failure::Checkpoint(err.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Data(m) => ("data", m),
            Failure::Checkpoint(m) => ("checkpoint", m),
            Failure::Internal(m) => ("internal", m),
        };
        write!(f, "{kind} error: {msg}")
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let msg = err.to_string();
        match err {
            Error::Usage(_) | Error::Config(_) | Error::Alphabet(_) | Error::InfeasibleTarget { .. } => {
                Failure::Usage(msg)
            }
            Error::Data(_) | Error::Storage { .. } => Failure::Data(msg),
            Error::Checkpoint(_) => Failure::Checkpoint(msg),
            Error::Dimension(_) | Error::State(_) => Failure::Internal(msg),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
