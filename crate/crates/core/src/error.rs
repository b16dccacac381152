use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing required file {0}")]
    MissingFile(PathBuf),

    #[error("relations not seen in training: {}", .0.join(", "))]
    UnseenRelations(Vec<String>),

    #[error("graph construction: {0}")]
    Construction(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("subgraph has {size} nodes, cap is {cap}")]
    SubgraphTooLarge { size: usize, cap: usize },

    #[error("closed-walk enumeration exceeded the cap of {cap} walks")]
    WalkCapExceeded { cap: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error("semiring {name} rejected: {reason}")]
    SemiringRejected { name: String, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("tape state: {0}")]
    State(String),

    #[error("negative sampling: {0}")]
    Sampling(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("ranking protocol: {0}")]
    Protocol(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Usage(_) => ErrorCategory::Usage,
            Error::Config(_) | Error::SemiringRejected { .. } => ErrorCategory::Config,
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::MissingFile(_)
            | Error::UnseenRelations(_)
            | Error::Construction(_)
            | Error::Checkpoint(_) => ErrorCategory::Data,
            Error::InvalidQuery(_)
            | Error::SubgraphTooLarge { .. }
            | Error::WalkCapExceeded { .. }
            | Error::Shape { .. }
            | Error::State(_)
            | Error::Sampling(_)
            | Error::Numeric(_)
            | Error::Protocol(_) => ErrorCategory::Runtime,
        }
    }
}
