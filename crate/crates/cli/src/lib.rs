//! Configuration and dispatch for the `ctp` command.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_with, schema_text, ConfigError, ConfigErrors, Experiment, ExperimentConfig};
pub use run::{run, CliError, RunOutcome};
