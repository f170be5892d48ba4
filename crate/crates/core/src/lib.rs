//! Active class-incremental learning over imbalanced data streams.
//!
//! The crate simulates a labeling-budget-constrained incremental learner:
//! data arrives in states of disjoint new classes, a two-phase acquisition
//! process (classical then balancing-driven) selects which samples to label,
//! a bounded herding memory replays past classes, and inference rescales
//! class scores by inverse training priors to counter imbalance.
//!
//! Modules follow the processing path: [`data`] produces streams and pools,
//! [`learner`] trains and calibrates the classifier, [`acquisition`] scores
//! and labels pool samples, [`memory`] maintains past-class exemplars,
//! [`pipeline`] orchestrates full experiments and [`metrics`] computes the
//! reported statistics.

pub mod acquisition;
pub mod data;
pub mod error;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod seeding;

pub use error::{Error, Result};
