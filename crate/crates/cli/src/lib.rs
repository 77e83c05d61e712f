//! Experiment driver behind the `spectral-moduli` binary.

pub mod commands;
pub mod config;

pub use commands::{execute, Command};
pub use config::{load_config, parse_config, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] spectral_moduli::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad configuration, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(spectral_moduli::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}
