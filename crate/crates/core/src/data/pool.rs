//! Labeled/unlabeled pool bookkeeping and the budgeted labeling oracle.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{ClassId, Sample, SampleId};
use crate::error::{Error, Result};

/// Tracks how many oracle calls a state may still issue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetLedger {
    total: usize,
    remaining: usize,
}

impl BudgetLedger {
    pub fn new(total: usize) -> Self {
        BudgetLedger {
            total,
            remaining: total,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn issued(&self) -> usize {
        self.total - self.remaining
    }

    fn consume_one(&mut self) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::BudgetExhausted(format!(
                "all {} labels already issued",
                self.total
            )));
        }
        self.remaining -= 1;
        Ok(())
    }
}

/// Partition of one state's streamed samples into an unlabeled pool and a
/// labeled set. Labels are revealed only through [`PoolSet::oracle_label`],
/// which also moves the sample between the two sides.
#[derive(Debug, Clone)]
pub struct PoolSet {
    samples: BTreeMap<SampleId, Sample>,
    unlabeled: BTreeSet<SampleId>,
    labeled: Vec<SampleId>, // in labeling order
    revealed: BTreeMap<SampleId, ClassId>,
}

impl PoolSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        let mut map = BTreeMap::new();
        let mut unlabeled = BTreeSet::new();
        for s in samples {
            unlabeled.insert(s.id);
            map.insert(s.id, s);
        }
        PoolSet {
            samples: map,
            unlabeled,
            labeled: Vec::new(),
            revealed: BTreeMap::new(),
        }
    }

    pub fn initial_size(&self) -> usize {
        self.samples.len()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled.len()
    }

    pub fn features_of(&self, id: SampleId) -> Option<&[f64]> {
        self.samples.get(&id).map(|s| s.features.as_slice())
    }

    /// Unlabeled candidates in ascending id order.
    pub fn unlabeled_items(&self) -> Vec<(SampleId, &[f64])> {
        self.unlabeled
            .iter()
            .map(|id| (*id, self.samples[id].features.as_slice()))
            .collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<SampleId> {
        self.unlabeled.iter().copied().collect()
    }

    /// Labeled samples with their revealed labels, in labeling order.
    pub fn labeled_items(&self) -> Vec<(SampleId, &[f64], ClassId)> {
        self.labeled
            .iter()
            .map(|id| (*id, self.samples[id].features.as_slice(), self.revealed[id]))
            .collect()
    }

    /// Labeled samples grouped by revealed class, each group in labeling order.
    pub fn labeled_by_class(&self) -> BTreeMap<ClassId, Vec<Sample>> {
        let mut by_class: BTreeMap<ClassId, Vec<Sample>> = BTreeMap::new();
        for id in &self.labeled {
            by_class
                .entry(self.revealed[id])
                .or_default()
                .push(self.samples[id].clone());
        }
        by_class
    }

    pub fn labeled_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for id in &self.labeled {
            *counts.entry(self.revealed[id]).or_insert(0) += 1;
        }
        counts
    }

    /// Reveals the true label of an unlabeled sample, consuming one unit of
    /// budget and moving the sample to the labeled side.
    pub fn oracle_label(&mut self, id: SampleId, budget: &mut BudgetLedger) -> Result<ClassId> {
        let sample = self.samples.get(&id).ok_or(Error::UnknownSample(id))?;
        if !self.unlabeled.contains(&id) {
            return Err(Error::Request(format!(
                "sample {id} is not in the unlabeled pool"
            )));
        }
        budget.consume_one()?;
        let label = sample.true_label();
        self.unlabeled.remove(&id);
        self.labeled.push(id);
        self.revealed.insert(id, label);
        Ok(label)
    }

    /// Partition invariant: every sample is on exactly one side.
    pub fn partition_holds(&self) -> bool {
        self.unlabeled.len() + self.labeled.len() == self.samples.len()
            && self.labeled.iter().all(|id| !self.unlabeled.contains(id))
    }
}
