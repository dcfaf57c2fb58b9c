//! Command-line front end for the enrichment-trial engine.
//!
//! Exit codes: 0 success, 1 configuration error (unreadable or invalid
//! scenario file, bad flags), 2 scenario failure (a run or an output write
//! failed), 3 a validation suite failed.

pub mod commands;
pub mod output;
pub mod scenario_file;
pub mod validation;

pub use commands::{run, Cli, Command};
pub use scenario_file::{ExpandedScenario, Method, ScenarioFile, ScenarioSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scenario failed: {0}")]
    Scenario(String),
    #[error("{0} validation suite(s) failed")]
    Validation(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Scenario(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}
