use thiserror::Error;

use crate::autodiff::TensorError;
use crate::graph::GraphError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("epoch {epoch}: {message}")]
    Numeric { epoch: usize, message: String },
    #[error("empty task: {0}")]
    EmptyTask(String),
    #[error("nothing to attack: {0}")]
    NothingToAttack(String),
    #[error("{0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Self::Config(message.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Tensor(TensorError::Config(_)) => ErrorKind::Config,
            Error::Graph(GraphError::Config(_)) => ErrorKind::Config,
            Error::Graph(_) | Error::Io(_) | Error::EmptyTask(_) | Error::NothingToAttack(_) => ErrorKind::Data,
            Error::Numeric { .. } => ErrorKind::Numeric,
            Error::Tensor(_) | Error::Metric(_) => ErrorKind::Other,
        }
    }
}
