use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid solver state: {0}")]
    InvalidState(String),
    #[error("pressure system assembly failed: {0}")]
    Assembly(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FluidError>;
