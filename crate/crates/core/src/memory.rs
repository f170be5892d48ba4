//! Bounded exemplar memory for past classes: herding-based selection and
//! cross-state rebalancing under a fixed capacity.

use std::collections::BTreeMap;

use crate::acquisition::{euclidean, EmbeddingView};
use crate::data::{ClassId, Sample, SampleId};
use crate::error::{Error, Result};

/// Per-class exemplar store. Each class holds a prefix of its original
/// herding order; rebalancing only ever truncates, so the prefix property is
/// preserved across states.
#[derive(Debug, Clone, Default)]
pub struct ExemplarMemory {
    capacity: usize,
    per_class: BTreeMap<ClassId, Vec<Sample>>,
}

impl ExemplarMemory {
    pub fn new(capacity: usize) -> Self {
        ExemplarMemory {
            capacity,
            per_class: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.per_class.keys().copied().collect()
    }

    pub fn total_exemplars(&self) -> usize {
        self.per_class.values().map(|v| v.len()).sum()
    }

    pub fn exemplars(&self, class: ClassId) -> &[Sample] {
        self.per_class.get(&class).map_or(&[], |v| v.as_slice())
    }

    /// All stored samples, grouped by ascending class id.
    pub fn all_samples(&self) -> Vec<&Sample> {
        self.per_class.values().flatten().collect()
    }

    /// Stored exemplar ids per class, for audit snapshots.
    pub fn snapshot_ids(&self) -> BTreeMap<ClassId, Vec<SampleId>> {
        self.per_class
            .iter()
            .map(|(c, v)| (*c, v.iter().map(|s| s.id).collect()))
            .collect()
    }

    pub fn labeled_counts(&self) -> BTreeMap<ClassId, usize> {
        self.per_class
            .iter()
            .map(|(c, v)| (*c, v.len()))
            .collect()
    }
}

/// Greedy herding order: with class mean mu over embeddings, step m picks the
/// sample whose embedding brings the running mean of the selected set closest
/// to mu. Ties go to the lowest id; every sample appears exactly once.
pub fn herding_order(class_samples: &[Sample], embedder: &EmbeddingView) -> Result<Vec<SampleId>> {
    if class_samples.is_empty() {
        return Err(Error::Request("herding over an empty class".into()));
    }
    let mut samples: Vec<&Sample> = class_samples.iter().collect();
    samples.sort_by_key(|s| s.id);
    let embeddings: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| embedder.embed(&s.features))
        .collect::<Result<_>>()?;
    let dim = embeddings[0].len();
    let n = embeddings.len();

    let mut mean = vec![0.0; dim];
    for e in &embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut chosen_sum = vec![0.0; dim];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for step in 1..=n {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let candidate_mean: Vec<f64> = chosen_sum
                .iter()
                .zip(&embeddings[i])
                .map(|(s, e)| (s + e) / step as f64)
                .collect();
            let err = euclidean(&mean, &candidate_mean);
            if best.is_none_or(|(_, be)| err < be) {
                best = Some((i, err));
            }
        }
        let (idx, _) = best.expect("unchosen samples remain");
        taken[idx] = true;
        for (s, e) in chosen_sum.iter_mut().zip(&embeddings[idx]) {
            *s += e;
        }
        order.push(samples[idx].id);
    }
    Ok(order)
}

/// Inserts exemplars of new classes and reduces past classes so the total
/// fits the capacity. The per-class quota is floor(K / N) with the first
/// K mod N classes (ascending id) getting one extra; when K < N only the K
/// lowest-id classes keep a single exemplar and a warning is logged.
pub fn update_memory(
    memory: &ExemplarMemory,
    new_class_data: &BTreeMap<ClassId, Vec<Sample>>,
    embedder: &EmbeddingView,
) -> Result<ExemplarMemory> {
    for class in new_class_data.keys() {
        if memory.per_class.contains_key(class) {
            return Err(Error::Validation(format!(
                "class {class} is already stored in memory"
            )));
        }
    }
    let all_classes: Vec<ClassId> = memory
        .per_class
        .keys()
        .chain(new_class_data.keys())
        .copied()
        .collect();
    let mut sorted = all_classes;
    sorted.sort_unstable();
    let n = sorted.len();
    if n == 0 {
        return Ok(memory.clone());
    }
    let k = memory.capacity;
    if k < n {
        log::warn!(
            "memory capacity {k} is below the class count {n}; only the {k} lowest-id classes keep an exemplar"
        );
    }
    let base = k / n;
    let extra = k % n;

    let mut out = ExemplarMemory::new(k);
    for (rank, class) in sorted.iter().enumerate() {
        let quota = base + usize::from(rank < extra);
        if quota == 0 {
            continue;
        }
        let stored = if let Some(existing) = memory.per_class.get(class) {
            existing.iter().take(quota).cloned().collect::<Vec<_>>()
        } else {
            let samples = &new_class_data[class];
            if samples.is_empty() {
                continue;
            }
            let order = herding_order(samples, embedder)?;
            let by_id: BTreeMap<SampleId, &Sample> =
                samples.iter().map(|s| (s.id, s)).collect();
            order
                .iter()
                .take(quota)
                .map(|id| (*by_id.get(id).expect("order ids come from samples")).clone())
                .collect()
        };
        if !stored.is_empty() {
            out.per_class.insert(*class, stored);
        }
    }
    debug_assert!(out.total_exemplars() <= k);
    Ok(out)
}
