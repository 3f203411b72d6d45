use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },

    #[error("dimension mismatch: {context}: expected {expected:?}, got {actual:?}")]
    Dimension { context: &'static str, expected: Vec<usize>, actual: Vec<usize> },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("index out of range: {kind} {index} (count {count})")]
    Index { kind: &'static str, index: usize, count: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{name}`; closest known: {suggestions:?}")]
    UnknownRelation { name: String, suggestions: Vec<String> },

    #[error("entity `{0}` has no description")]
    MissingDescription(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("unsupported checkpoint version `{0}`")]
    UnsupportedVersion(String),

    #[error("checkpoint precision `{found}` does not match this build (`{expected}`)")]
    PrecisionMismatch { expected: String, found: String },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dim(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Dimension { context, expected: expected.to_vec(), actual: actual.to_vec() }
    }
}
