//! Configuration loading and command execution for the `fk` binary.

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, Command, ConfigError, RunConfig};
pub use run::{read_report, run, summarize, RunOutput, RunReport};
