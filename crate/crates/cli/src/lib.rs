//! Command line front end: subcommands over a shared workspace directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod workspace;

pub use config::Config;
pub use error::{CliError, Result};
