//! Experiment configuration, seeded sweeps, CSV output and persistence.

pub mod config;
pub mod persist;
pub mod seeds;
pub mod sweep;

pub use config::{Estimator, ExperimentConfig};
pub use sweep::{run_sweep, SweepResult};
