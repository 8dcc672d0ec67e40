//! Command-line front end: configuration, ingestion and the subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
