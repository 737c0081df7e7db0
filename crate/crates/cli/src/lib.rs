//! Config-driven experiment runner for the hjmx engine.

pub mod config;
pub mod runner;
pub mod selfcheck;

pub use config::{ConfigError, ExperimentConfig};
pub use runner::{Experiment, RunError};
