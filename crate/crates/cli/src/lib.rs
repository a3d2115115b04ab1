//! Experiment pipeline behind the `voltvar` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::RunLayout;
pub use config::RunConfig;
pub use error::{CliError, Stage};
