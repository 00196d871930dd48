//! Experiment driver: matrix design, simulation, compressed acquisition,
//! two-step reconstruction and error tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::{ExperimentConfig, Preset, Variant};
pub use error::{CliError, CliResult};
pub use report::{ErrorReport, Table};
