//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by any stage of the evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A text input could not be parsed. `line` is 1-based; 0 means the
    /// location is not line-addressable.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// An input file is empty where content is required.
    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),

    /// A constraint on argument values was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two vocabularies have no words in common.
    #[error("no shared words between {left} and {right}")]
    EmptyIntersection { left: String, right: String },

    /// Paired word sets disagree.
    #[error("word sets differ between {left} and {right}: {difference:?}")]
    WordSetMismatch {
        left: String,
        right: String,
        difference: Vec<String>,
    },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Every grid-search candidate failed to train.
    #[error("all {0} hidden-size candidates failed to train")]
    AllCandidatesFailed(usize),

    /// Manifest validation failed.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Required result records are missing from a results directory.
    #[error("missing results for: {0:?}")]
    MissingResults(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
