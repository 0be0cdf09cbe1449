//! Experiment orchestration: JSON configuration, seeded multi-run execution,
//! on-disk artifacts, bound verification and report rendering.

pub mod config;
pub mod report;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, Variant, OUTPUT_ROOT_ENV};
pub use run::{run_experiment, run_seed, ExperimentSummary, SeedRun};
pub use verify::{verify_dir, verify_trace};
