//! Command-line front end: configuration, output bookkeeping and subcommands.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::Outcome;
pub use config::{Overrides, RunConfig};
