//! Experiment runner for `partialfl-core`: TOML configs, parameter sweeps,
//! dataset files, and JSON-lines / CSV reports.

pub mod config;
pub mod dataset;
mod error;
pub mod grid;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use report::{ReportDocument, ReportFormat};
