use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// Malformed input; `record` is the 0-based record (or line) index when known.
    #[error("{}{}: {message}", path.display(), record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        record: Option<usize>,
        message: String,
    },

    #[error("utterance {utterance}: {message}")]
    Validation { utterance: String, message: String },

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("tagging: {0}")]
    Tagging(#[from] crate::tagging::TaggingError),

    #[error("embedding lookup: {0}")]
    Embedding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("non-finite training loss at epoch {epoch}, batch {batch}; lower the learning rate or check initialisation")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("evaluation: {0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, record: Option<usize>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            record,
            message: message.to_string(),
        }
    }

    pub(crate) fn validation(utterance: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            utterance: utterance.into(),
            message: message.into(),
        }
    }
}
