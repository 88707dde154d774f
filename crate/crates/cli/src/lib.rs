//! Library side of the `gridabs` command-line tool: configuration, the five
//! commands and their reports.
//!
//! Every command returns a report whose `Display` output is what the binary
//! prints. Numbers in reports use Rust's shortest round-trip formatting;
//! CSV files use `{:.16e}` (17 significant digits).

use std::path::PathBuf;

use gridabs_core::abstraction::AbstractionError;
use gridabs_core::optimizer::OptimizeError;
use thiserror::Error;

pub mod commands;
pub mod config;

pub use commands::{
    cmd_abstract, cmd_certify, cmd_compare, cmd_optimize, cmd_predict, run, Command, Overrides,
};
pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("integration blow-up: {0}")]
    BlowUp(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::BlowUp(_) => 5,
            CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            OptimizeError::InvalidBox { .. } => CliError::Config(format!("optimize: {e}")),
            OptimizeError::NotConverged { .. } | OptimizeError::Diverged { .. } => {
                CliError::NotConverged(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<AbstractionError> for CliError {
    fn from(e: AbstractionError) -> Self {
        match e {
            AbstractionError::BlowUp { .. } => CliError::BlowUp(e.to_string()),
            AbstractionError::Sink { .. } => CliError::Other(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
