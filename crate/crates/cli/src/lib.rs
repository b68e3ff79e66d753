//! Command-line driver: run configuration, training and evaluation commands, sweeps and artifact export.

pub mod app;
pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::{HybridMode, RunConfig};
pub use error::{CliError, CliResult};
