//! Command-line harness around `weyl_persistence`: configuration files,
//! the experiment commands, and their run records.

pub mod commands;
pub mod config;
pub mod error;
pub mod record;

pub use commands::run;
pub use config::{Command, ExperimentConfig};
pub use error::CliError;
pub use record::{ResultLine, RunRecord};
