//! Scenario runner: loads scenario files, generates or replays sensor
//! streams, runs the estimator and writes CSV logs and summaries.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{execute, Cli, Command, EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};
