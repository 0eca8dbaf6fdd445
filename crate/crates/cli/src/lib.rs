//! Dataset generation and inspection commands behind the `polyseg` binary.

pub mod commands;
pub mod config;
pub mod dataset;

use std::fmt;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Generation = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        CliError { kind: ExitKind::Usage, error: error.into() }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        CliError { kind: ExitKind::Data, error: error.into() }
    }

    pub fn generation(error: impl Into<anyhow::Error>) -> Self {
        CliError { kind: ExitKind::Generation, error: error.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;
