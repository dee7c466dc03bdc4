//! Experiment harness behind the `grace` binary: config files, artifact
//! formats, and one function per command.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod failure;
pub mod gradcheck;

pub use config::ExperimentConfig;
pub use failure::{CliResult, Failure};
