//! Experiment driver behind the command line tool.

mod commands;
mod config;
mod dataset;

pub use commands::*;
pub use config::*;
pub use dataset::*;
