use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown instance `{0}`")]
    UnknownInstance(String),

    #[error("missing ground truth for instance `{0}`")]
    MissingGroundTruth(String),

    #[error("pool exhausted: {available} unlabeled, {requested} requested")]
    PoolExhausted { available: usize, requested: usize },

    #[error("duplicate submission for instance `{0}`")]
    DuplicateSubmission(String),

    #[error("session closed")]
    SessionClosed,

    #[error("{0}")]
    Session(String),

    #[error("corrupt event log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
