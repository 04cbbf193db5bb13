use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },

    #[error("input too long: query prefix needs {needed} tokens, max_seq_len is {max}")]
    InputTooLong { needed: usize, max: usize },

    #[error("candidate set for query {0} is empty")]
    EmptyCandidateSet(String),

    #[error("duplicate document id {0}")]
    DuplicateDoc(String),

    #[error("document {0} not found in corpus")]
    MissingDoc(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), cause: source }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { source_name: source_name.into(), line, message: message.into() }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }
}
