use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence too short for {op}: length {len}, need at least {min}")]
    SequenceTooShort {
        op: &'static str,
        len: usize,
        min: usize,
    },

    #[error("operation graph is not acyclic at node {0}")]
    Cycle(usize),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("checkpoint entry {name:?}: {reason}")]
    Checkpoint { name: String, reason: String },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("config value out of range: {0}")]
    ConfigValue(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("non-deterministic objective: {0}")]
    NonDeterministic(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
