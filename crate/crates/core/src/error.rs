use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite gradient at parameter {index}; step aborted")]
    NonFiniteGradient { index: usize },

    #[error("malformed parameter blob: {0}")]
    Blob(String),

    #[error("checksum mismatch for {what}: stored {stored:016x}, computed {computed:016x}")]
    Corruption {
        what: String,
        stored: u64,
        computed: u64,
    },

    #[error("skill graph is invalid: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("unknown skill `{id}` (known: {})", .known.join(", "))]
    UnknownSkill { id: String, known: Vec<String> },

    #[error("skill `{0}` not found in library")]
    NotFound(String),

    #[error("skill `{0}` already exists in library (pass overwrite to replace it)")]
    Duplicate(String),

    #[error("cannot assemble `{skill}`: missing ancestor records {}", .missing.join(", "))]
    MissingAncestors { skill: String, missing: Vec<String> },

    #[error("invariant breach: {0}")]
    Invariant(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
