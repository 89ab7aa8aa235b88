use thiserror::Error;

use ssm_lab_core::Error as CoreError;

/// Errors surfaced by the command-line harness. Each maps to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{0}")]
    Diverged(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Diverged(_) => 3,
            // Anything else (io, parse of generated files) is reported as a
            // runtime failure.
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(msg) => CliError::Config(msg),
            CoreError::InvalidDimension(_)
            | CoreError::InvalidSize(_)
            | CoreError::InvalidFeature { .. } => CliError::Config(e.to_string()),
            CoreError::Diverged { .. } | CoreError::NonFinite(_) => CliError::Diverged(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
