use std::fmt;

use geofeat::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_RESUMABLE: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    /// Classify a library error raised by `stage`.
    pub fn from_core(stage: &str, e: Error) -> Self {
        let code = match &e {
            _ if e.is_resumable() => EXIT_RESUMABLE,
            Error::InvalidArgument(_) | Error::CheckpointMismatch { .. } | Error::NoAdapter(_) => EXIT_CONFIG,
            _ => EXIT_INPUT,
        };
        Self { code, message: format!("{stage}: {e}") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Attach a stage name to a library result.
pub trait Stage<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T> Stage<T> for geofeat::Result<T> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(stage, e))
    }
}
