//! User-facing orchestration: JSON configs, synthetic data, experiment
//! execution with CSV/JSON artifacts, and parameter sweeps.

pub mod config;
pub mod data;
pub mod runner;
pub mod sweep;

pub use config::{ExperimentConfig, ExperimentKind};
pub use runner::{run, RunRecord, RunRows, OUT_DIR_ENV};
pub use sweep::{run_sweep, SweepOutcome, SweepPoint};
