use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice dimensions must be at least 1x1, got a={a} b={b}")]
    InvalidDims { a: usize, b: usize },

    #[error("genome decodes to an empty morphology")]
    EmptyMorphology,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank vector has zero variance")]
    ZeroVariance,

    #[error("sequences must have equal length >= 2 (got {0} and {1})")]
    LengthMismatch(usize, usize),

    #[error("rollout became numerically unstable at step {step}")]
    UnstableRollout { step: usize },

    #[error("no valid individual survived generation {generation}")]
    Extinct { generation: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint was written by config {found}, current config is {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
