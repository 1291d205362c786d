//! Scenario library, seed sweeps, the binary agreement battery and output
//! formats for the `pmvba` command-line tool.

pub mod battery;
pub mod chart;
pub mod config;
pub mod report;
pub mod scenarios;
pub mod sweep;

pub use config::{ConfigError, RunConfig};
