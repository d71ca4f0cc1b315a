//! Configuration-driven entry points of the `fracture` binary.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{audit, korn, simulate, AuditArgs, KornArgs};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing or unreadable input: {0}")]
    Missing(String),
    #[error("cannot write output: {0}")]
    Io(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("audit failed: {0}")]
    AuditFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Missing(_) | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
            CliError::AuditFailed(_) => 4,
        }
    }
}
