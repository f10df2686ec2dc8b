//! Experiment drivers and command-line front end for direct noise
//! optimization on toy diffusion models.
//!
//! Every command is deterministic in its configuration and base seed: seeds
//! are processed in parallel but artifacts are assembled in seed order.

pub mod app;
pub mod config;
pub mod experiments;
pub mod output;

use dno_core::DnoError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or arguments; nothing has been written.
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure while running or writing artifacts.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Library errors raised while validating a configuration.
impl From<DnoError> for CliError {
    fn from(e: DnoError) -> Self {
        match e {
            DnoError::NumericDomain(_) => CliError::Runtime(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
