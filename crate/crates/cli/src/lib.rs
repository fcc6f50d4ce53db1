//! Configuration, model persistence and subcommand implementations behind the
//! `muygps` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod model;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Result};
