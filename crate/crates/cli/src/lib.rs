//! Experiment harness for the `ssm-inla` crate: configuration, CSV tables,
//! SVG plots, the subcommand implementations and the acceptance checks.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod study;
pub mod tables;

pub use error::{CliError, CliResult};
