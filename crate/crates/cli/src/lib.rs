//! Command-line orchestration of data collection, controller design and
//! closed-loop simulation.
//!
//! Exit codes: 0 success, 1 configuration or usage, 2 data, 3 i/o,
//! 4 design, 5 simulation.

pub mod commands;
pub mod config;
pub mod error;
pub mod seeds;

pub use error::{CliError, CliResult};
