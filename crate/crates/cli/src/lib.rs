//! Library side of the `mmc` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
