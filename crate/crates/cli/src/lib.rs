//! Configuration-driven experiments on top of `smp-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod setup;

pub use commands::{run, Command, Outcome};
pub use config::ExperimentConfig;
pub use error::CliError;
