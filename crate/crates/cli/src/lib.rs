//! Orchestration behind the `vggfer` command: run configuration, the
//! subcommand implementations and exit-code mapping.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::*;
pub use config::{CvBase, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs or inconsistent configuration.
    Usage(String),
    /// One or more verification checks failed.
    ChecksFailed(usize),
    Core(vggfer::Error),
}

impl CliError {
    /// 2 for usage and I/O problems, 1 for computational failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::ChecksFailed(_) => 1,
            CliError::Core(e) if e.is_usage_or_io() => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::ChecksFailed(n) => write!(f, "{n} verification check(s) failed"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<vggfer::Error> for CliError {
    fn from(e: vggfer::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
