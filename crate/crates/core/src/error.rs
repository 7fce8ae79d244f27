use std::path::PathBuf;

use crate::candidates::CandidateError;
use crate::corpus::CorpusError;
use crate::ndtensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("entity {0:?} is not in the model's entity table")]
    UnknownEntity(String),
    #[error("numerical failure in batch [{}]: {source}", docs.join(", "))]
    Numerical {
        docs: Vec<String>,
        #[source]
        source: TensorError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// NaN/Inf failures, as opposed to bad data or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } => true,
            Error::Tensor(e) => e.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
