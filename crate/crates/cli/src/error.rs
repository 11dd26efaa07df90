//! Error type carrying the process exit code.
//!
//! 0 ok, 2 config error, 3 data error, 4 experiment failure.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// malformed or inconsistent configuration (exit 2)
    Config(String),
    /// missing or unreadable data: files, corpora, checkpoints (exit 3)
    Data(String),
    /// a simulation or training stage failed (exit 4)
    Experiment(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Experiment(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }

    pub fn experiment(msg: impl Into<String>) -> CliError {
        CliError::Experiment(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Data(s) => write!(f, "data error: {s}"),
            CliError::Experiment(s) => write!(f, "experiment failure: {s}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
