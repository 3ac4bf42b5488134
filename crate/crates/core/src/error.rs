use thiserror::Error;

use setrl_highway::SimError;
use setrl_nn::NnError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("unknown encoder kind {0:?}")]
    UnknownEncoder(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed dataset: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
