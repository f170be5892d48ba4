//! Brute-force per-step oracles for the greedy selectors. Each oracle
//! re-derives every quantity from scratch at every step (counts, centroids,
//! reference distances) instead of maintaining incremental state, providing
//! an independent route to the same selection sequence.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        sum += d * d;
    }
    sum.sqrt()
}

fn min_dist(point: &[f64], refs: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for r in refs {
        let d = euclidean(point, r);
        if d < best {
            best = d;
        }
    }
    best
}

/// Greedy k-center by full re-scan each step. Candidates in ascending id
/// order; ties go to the lowest id.
pub fn oracle_coreset(
    pool: &[(u64, Vec<f64>)],
    base_refs: &[Vec<f64>],
    k: usize,
) -> Vec<u64> {
    let mut items: Vec<(u64, Vec<f64>)> = pool.to_vec();
    items.sort_by_key(|(id, _)| *id);
    let mut refs: Vec<Vec<f64>> = base_refs.to_vec();
    let mut picks = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (i, (id, emb)) in items.iter().enumerate() {
            if picks.contains(id) {
                continue;
            }
            let d = min_dist(emb, &refs);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (idx, _) = best.unwrap();
        refs.push(items[idx].1.clone());
        picks.push(items[idx].0);
    }
    picks
}

/// Greedy herding by full re-scan: at step m the running sum of the chosen
/// embeddings is recomputed from the pick list before scoring candidates.
pub fn oracle_herding(samples: &[(u64, Vec<f64>)]) -> Vec<u64> {
    let mut items: Vec<(u64, Vec<f64>)> = samples.to_vec();
    items.sort_by_key(|(id, _)| *id);
    let dim = items[0].1.len();
    let n = items.len();
    let mut mean = vec![0.0; dim];
    for (_, e) in &items {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut picks: Vec<u64> = Vec::new();
    for step in 1..=n {
        let mut chosen_sum = vec![0.0; dim];
        for id in &picks {
            let (_, e) = items.iter().find(|(i, _)| i == id).unwrap();
            for (s, v) in chosen_sum.iter_mut().zip(e) {
                *s += v;
            }
        }
        let mut best: Option<(u64, f64)> = None;
        for (id, e) in &items {
            if picks.contains(id) {
                continue;
            }
            let candidate_mean: Vec<f64> = chosen_sum
                .iter()
                .zip(e)
                .map(|(s, v)| (s + v) / step as f64)
                .collect();
            let err = euclidean(&mean, &candidate_mean);
            if best.is_none_or(|(_, be)| err < be) {
                best = Some((*id, err));
            }
        }
        picks.push(best.unwrap().0);
    }
    picks
}

/// One pool sample: (id, embedding, label).
pub type PoolItem = (u64, Vec<f64>, usize);

/// Labeled state of the oracle simulations, in labeling order.
pub type LabeledSeq = Vec<PoolItem>;

fn class_stats(labeled: &LabeledSeq) -> BTreeMap<usize, (usize, Vec<f64>)> {
    let mut stats: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for (_, emb, label) in labeled {
        let entry = stats
            .entry(*label)
            .or_insert_with(|| (0, vec![0.0; emb.len()]));
        entry.0 += 1;
        for (s, v) in entry.1.iter_mut().zip(emb) {
            *s += v;
        }
    }
    stats
}

fn split_sets(stats: &BTreeMap<usize, (usize, Vec<f64>)>) -> (Vec<usize>, Vec<usize>) {
    let total: usize = stats.values().map(|(c, _)| c).sum();
    let mean = total as f64 / stats.len() as f64;
    let minority = stats
        .iter()
        .filter(|(_, (c, _))| (*c as f64) < mean)
        .map(|(k, _)| *k)
        .collect();
    let majority = stats
        .iter()
        .filter(|(_, (c, _))| (*c as f64) >= mean)
        .map(|(k, _)| *k)
        .collect();
    (minority, majority)
}

fn centroid_of(stats: &BTreeMap<usize, (usize, Vec<f64>)>, class: usize) -> Vec<f64> {
    let (count, sum) = &stats[&class];
    sum.iter().map(|s| s / *count as f64).collect()
}

fn min_centroid_dist(
    emb: &[f64],
    stats: &BTreeMap<usize, (usize, Vec<f64>)>,
    classes: &[usize],
) -> f64 {
    let mut best = f64::INFINITY;
    for c in classes {
        let d = euclidean(emb, &centroid_of(stats, *c));
        if d < best {
            best = d;
        }
    }
    best
}

/// Balanced core-set: per step, re-derive the minority/majority split and
/// centroids from the labeled sequence, filter, then apply the core-set rule
/// over base refs plus every labeled embedding. Picks are labeled immediately.
pub fn oracle_balanced_coreset(
    pool: &[PoolItem],
    initial_labeled: &LabeledSeq,
    base_refs: &[Vec<f64>],
    k: usize,
) -> Vec<u64> {
    let mut items: Vec<PoolItem> = pool.to_vec();
    items.sort_by_key(|(id, _, _)| *id);
    let mut labeled: LabeledSeq = initial_labeled.clone();
    let mut picks = Vec::new();
    for _ in 0..k {
        let stats = class_stats(&labeled);
        let (minority, majority) = split_sets(&stats);
        let mut refs = base_refs.to_vec();
        for (_, emb, _) in &labeled {
            refs.push(emb.clone());
        }
        let remaining: Vec<&PoolItem> = items
            .iter()
            .filter(|(id, _, _)| !picks.contains(id))
            .collect();
        let mut candidates: Vec<&PoolItem> = Vec::new();
        if !minority.is_empty() && !majority.is_empty() {
            for item in &remaining {
                let rel = min_centroid_dist(&item.1, &stats, &minority)
                    - min_centroid_dist(&item.1, &stats, &majority);
                if rel < 0.0 {
                    candidates.push(item);
                }
            }
        }
        if candidates.is_empty() {
            candidates = remaining;
        }
        let mut best: Option<(&PoolItem, f64)> = None;
        for item in candidates {
            let d = min_dist(&item.1, &refs);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((item, d));
            }
        }
        let (chosen, _) = best.unwrap();
        picks.push(chosen.0);
        labeled.push(chosen.clone());
    }
    picks
}

/// Poorest-class-first: per step, re-derive the split, pick the class with
/// the fewest labels (seeded random tie-break over the ascending tie set),
/// then take the pool sample closest to it and far from every majority
/// centroid. Picks are labeled immediately.
pub fn oracle_poorest_first(
    pool: &[PoolItem],
    initial_labeled: &LabeledSeq,
    k: usize,
    seed: u64,
) -> Vec<u64> {
    let mut items: Vec<PoolItem> = pool.to_vec();
    items.sort_by_key(|(id, _, _)| *id);
    let mut labeled: LabeledSeq = initial_labeled.clone();
    let mut picks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..k {
        let stats = class_stats(&labeled);
        let (minority, majority) = split_sets(&stats);
        let candidates: Vec<usize> = if minority.is_empty() {
            stats.keys().copied().collect()
        } else {
            minority
        };
        let min_count = candidates.iter().map(|c| stats[c].0).min().unwrap();
        let tied: Vec<usize> = candidates
            .into_iter()
            .filter(|c| stats[c].0 == min_count)
            .collect();
        let poor = if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.gen_range(0..tied.len())]
        };
        let mu_poor = centroid_of(&stats, poor);

        let mut best: Option<(u64, f64)> = None;
        for (id, emb, _) in &items {
            if picks.contains(id) {
                continue;
            }
            let to_poor = euclidean(emb, &mu_poor);
            let to_majority = if majority.is_empty() {
                0.0
            } else {
                min_centroid_dist(emb, &stats, &majority)
            };
            let score = to_poor - to_majority;
            if best.is_none_or(|(_, bs)| score < bs) {
                best = Some((*id, score));
            }
        }
        let (id, _) = best.unwrap();
        let item = items.iter().find(|(i, _, _)| *i == id).unwrap().clone();
        picks.push(id);
        labeled.push(item);
    }
    picks
}
