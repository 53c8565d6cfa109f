use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("no documents")]
    NoDocuments,

    #[error("no terms survive df filters")]
    EmptyVocabulary,

    #[error("no seed word in vocabulary")]
    NoSeedWords,

    #[error("update diverged at iteration {iteration} ({factor} rule)")]
    Diverged {
        iteration: usize,
        factor: &'static str,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}
