//! Command-line front end: config ingestion, subcommand dispatch and
//! reproducible output directories.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, ConfigErrors, RunConfig};
pub use run::{dispatch, Command, Outcome, RunError};
