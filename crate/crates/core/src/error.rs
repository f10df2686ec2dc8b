use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DnoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("index {index} out of range [{min}, {max}]")]
    Index { index: usize, min: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    /// An operation needs a capability (e.g. a reward gradient) that is hidden.
    #[error("capability error: {0}")]
    Capability(String),
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, DnoError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DnoError::Dimension { expected, got })
    }
}
