use std::path::PathBuf;

use sae_core::error::SaeError;
use sae_core::sim::Issue;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config has {} issue(s)", .0.len())]
    Invalid(Vec<Issue>),
    #[error("input {path}, line {line}: {message}")]
    Input { path: PathBuf, line: u64, message: String },
    #[error(transparent)]
    Core(#[from] SaeError),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// What a failed run prints to stderr and leaves in `error.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub kind: &'static str,
    pub stage: Option<&'static str>,
    pub message: String,
    pub issues: Vec<Issue>,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse(_) => "config-parse",
            CliError::Invalid(_) => "config-invalid",
            CliError::Input { .. } => "input",
            CliError::Core(e) => e.kind(),
            CliError::Threads(_) => "threads",
        }
    }

    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid(_) => 2,
            _ => 1,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            status: "error",
            kind: self.kind(),
            stage: match self {
                CliError::Core(e) => e.stage(),
                _ => None,
            },
            message: self.to_string(),
            issues: match self {
                CliError::Invalid(issues) => issues.clone(),
                _ => Vec::new(),
            },
        }
    }
}
