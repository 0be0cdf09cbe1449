//! Adaptive per-sample weighting for curriculum learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`scheduler`] marks samples easy/hard against an error threshold and turns the
//!   hard-sample mass into a boosting-style weight change.
//! * [`weighting`] decides *when* that update is applied inside an epoch
//!   (epoch level, iteration level, or both).
//! * [`variants`] builds curriculum sampling and weighted mixup on top of the weights.
//! * [`pd`] detects the phase transition of a training run from parameter checkpoints.
//! * [`theory`] accumulates cumulative margins and checks the convergence bounds on
//!   live traces.
//! * [`models`] and [`datasets`] provide tiny models and synthetic data to drive it all,
//!   and [`runner`] wires everything into reproducible experiments.

pub mod datasets;
pub mod error;
pub mod models;
pub mod numeric;
pub mod pd;
pub mod rng;
pub mod runner;
pub mod scheduler;
pub mod theory;
pub mod variants;
pub mod weighting;

pub use error::{Error, Result};
pub use scheduler::{
    DifficultyVector, EpochUpdate, LossVector, SampleWeights, SchedulerConfig, WeightChange,
};
