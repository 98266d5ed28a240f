//! Configuration and experiment runners behind the `nullspde` binary.

pub mod config;
pub mod experiments;

pub use config::{load, parse, validate, Diagnostic, ExperimentConfig, Setup};
pub use experiments::{run, RunError, RunSummary};
