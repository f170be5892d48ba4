//! Class-incremental data streams: synthetic Gaussian generators, CSV
//! feature datasets, per-state pools and the labeling oracle.

mod csv;
mod generate;
mod pool;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv::{
    load_feature_dataset, load_feature_dataset_with_test, read_dataset_csv, write_dataset_csv,
};
pub use generate::{generate_gaussian_stream, make_imbalanced_counts, GeneratorSpec};
pub use pool::{BudgetLedger, PoolSet};

pub type SampleId = u64;
pub type ClassId = usize;

/// One data point. The ground-truth label is hidden from acquisition code;
/// during active learning it is revealed only through [`PoolSet::oracle_label`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    true_label: ClassId,
}

impl Sample {
    pub fn new(id: SampleId, features: Vec<f64>, true_label: ClassId) -> Self {
        Sample {
            id,
            features,
            true_label,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Ground-truth class. Reserved for the oracle, evaluation and tests;
    /// selection code must go through the budgeted oracle instead.
    pub fn true_label(&self) -> ClassId {
        self.true_label
    }
}

/// Data streamed in one incremental state: its new classes, the unlabeled
/// training pool and the held-out test samples for those classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateData {
    pub classes: Vec<ClassId>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// An ordered sequence of states with disjoint class sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassIncrementalStream {
    pub dim: usize,
    pub states: Vec<StateData>,
}

impl ClassIncrementalStream {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn classes_per_state(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.classes.len()).collect()
    }

    pub fn total_classes(&self) -> usize {
        self.states.iter().map(|s| s.classes.len()).sum()
    }

    /// All classes introduced up to and including state `t`.
    pub fn cumulative_classes(&self, t: usize) -> Vec<ClassId> {
        self.states[..=t]
            .iter()
            .flat_map(|s| s.classes.iter().copied())
            .collect()
    }

    /// Test samples of every class seen up to and including state `t`.
    pub fn cumulative_test(&self, t: usize) -> Vec<&Sample> {
        self.states[..=t]
            .iter()
            .flat_map(|s| s.test.iter())
            .collect()
    }

    /// Checks the structural invariants: disjoint class sets, unique sample
    /// ids, one shared feature dimension and finite feature values.
    pub fn validate(&self) -> Result<()> {
        let mut seen_classes: BTreeSet<ClassId> = BTreeSet::new();
        let mut seen_ids: BTreeSet<SampleId> = BTreeSet::new();
        for (t, state) in self.states.iter().enumerate() {
            for &c in &state.classes {
                if !seen_classes.insert(c) {
                    return Err(Error::Validation(format!(
                        "class {c} appears in more than one state (state {t})"
                    )));
                }
            }
            let class_set: BTreeSet<ClassId> = state.classes.iter().copied().collect();
            for sample in state.train.iter().chain(state.test.iter()) {
                if sample.dim() != self.dim {
                    return Err(Error::Validation(format!(
                        "sample {} has dimension {} but the stream has {}",
                        sample.id,
                        sample.dim(),
                        self.dim
                    )));
                }
                if sample.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "sample {} has non-finite features",
                        sample.id
                    )));
                }
                if !seen_ids.insert(sample.id) {
                    return Err(Error::Validation(format!(
                        "duplicate sample id {}",
                        sample.id
                    )));
                }
                if !class_set.contains(&sample.true_label) {
                    return Err(Error::Validation(format!(
                        "sample {} labeled {} outside state {t} classes",
                        sample.id, sample.true_label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits `num_classes` into `num_states` contiguous groups; the remainder
/// goes to the first group.
pub(crate) fn state_group_sizes(num_classes: usize, num_states: usize) -> Vec<usize> {
    let base = num_classes / num_states;
    let rem = num_classes % num_states;
    (0..num_states)
        .map(|t| if t == 0 { base + rem } else { base })
        .collect()
}
