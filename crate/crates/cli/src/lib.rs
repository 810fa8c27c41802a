//! Command-line front end: experiment configs in, CSV/JSON reports out.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{certify, compare, simulate, verify, CliError, Invocation, Outcome};
pub use config::{ConfigError, ExperimentConfig};
