//! Sample acquisition: four classical functions (rand, core, ent, marg) and
//! two balancing-driven functions (b-core, poor) that steer labeling toward
//! under-represented classes. The labeled-count distribution is refreshed
//! after every single labeling event.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BudgetLedger, ClassId, PoolSet, SampleId};
use crate::error::{Error, Result};
use crate::learner::LearnerModel;

/// Acquisition function used in the first (classical) phase of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicalAf {
    Rand,
    Core,
    Ent,
    Marg,
}

impl ClassicalAf {
    pub fn name(&self) -> &'static str {
        match self {
            ClassicalAf::Rand => "rand",
            ClassicalAf::Core => "core",
            ClassicalAf::Ent => "ent",
            ClassicalAf::Marg => "marg",
        }
    }
}

impl FromStr for ClassicalAf {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rand" => Ok(ClassicalAf::Rand),
            "core" => Ok(ClassicalAf::Core),
            "ent" => Ok(ClassicalAf::Ent),
            "marg" => Ok(ClassicalAf::Marg),
            other => Err(Error::Config(format!("unknown classical AF '{other}'"))),
        }
    }
}

/// Acquisition function used in the balancing phases. `Same` replays the
/// classical function, producing the rand-rand / core-core style baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalancingAf {
    #[serde(rename = "rand")]
    Rand,
    #[serde(rename = "poor")]
    Poor,
    #[serde(rename = "b-core")]
    BCore,
    #[serde(rename = "same")]
    Same,
}

impl BalancingAf {
    pub fn name(&self) -> &'static str {
        match self {
            BalancingAf::Rand => "rand",
            BalancingAf::Poor => "poor",
            BalancingAf::BCore => "b-core",
            BalancingAf::Same => "same",
        }
    }
}

impl FromStr for BalancingAf {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rand" => Ok(BalancingAf::Rand),
            "poor" => Ok(BalancingAf::Poor),
            "b-core" => Ok(BalancingAf::BCore),
            "same" => Ok(BalancingAf::Same),
            other => Err(Error::Config(format!("unknown balancing AF '{other}'"))),
        }
    }
}

/// Ranking convention for margin sampling. `Standard` treats the smallest
/// top-2 gap as most uncertain; `Literal` maximizes the gap instead, the
/// literal reading of the selection rule. Both are kept selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    #[default]
    Standard,
    Literal,
}


/// Two-phase plan: one classical iteration followed by balancing iterations,
/// with the per-iteration share of the state budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionPlan {
    pub classical: ClassicalAf,
    pub balancing: BalancingAf,
    pub budget_fractions: Vec<f64>,
}

impl Default for AcquisitionPlan {
    fn default() -> Self {
        AcquisitionPlan {
            classical: ClassicalAf::Rand,
            balancing: BalancingAf::Poor,
            budget_fractions: vec![0.4, 0.2, 0.2, 0.2],
        }
    }
}

impl AcquisitionPlan {
    pub fn iterations(&self) -> usize {
        self.budget_fractions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_fractions.is_empty() {
            return Err(Error::Validation("budget_fractions is empty".into()));
        }
        if self.budget_fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Validation(
                "budget_fractions must all be positive".into(),
            ));
        }
        let sum: f64 = self.budget_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "budget_fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Iteration label counts: fractions rounded down, remainder absorbed by
    /// the final iteration, so the counts sum to `total` exactly.
    pub fn sub_budgets(&self, total: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .budget_fractions
            .iter()
            .map(|f| (f * total as f64).floor() as usize)
            .collect();
        let assigned: usize = out[..out.len() - 1].iter().sum();
        let last = out.len() - 1;
        out[last] = total - assigned;
        out
    }
}

/// One labeling event, appended to the run's JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub state: usize,
    pub iteration: usize,
    pub af: String,
    pub sample_id: SampleId,
    pub revealed_label: ClassId,
    pub remaining_budget: usize,
}

/// Embedding provider: the model's embedding with optional L2 normalization.
#[derive(Clone, Copy)]
pub struct EmbeddingView<'a> {
    model: &'a LearnerModel,
    normalize: bool,
}

impl<'a> EmbeddingView<'a> {
    pub fn new(model: &'a LearnerModel, normalize: bool) -> Self {
        EmbeddingView { model, normalize }
    }

    pub fn model(&self) -> &LearnerModel {
        self.model
    }

    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut e = self.model.embed(features)?;
        if self.normalize {
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in e.iter_mut() {
                    *v /= norm;
                }
            }
        }
        Ok(e)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        sum += d * d;
    }
    sum.sqrt()
}

/// Shannon entropy in nats with 0 * ln 0 := 0. The caller is responsible for
/// renormalizing restricted probability vectors.
pub fn entropy_score(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// Gap between the top-2 probabilities; `None` for fewer than 2 entries.
pub fn margin_score(probs: &[f64]) -> Option<f64> {
    if probs.len() < 2 {
        return None;
    }
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probs {
        if p > top {
            second = top;
            top = p;
        } else if p > second {
            second = p;
        }
    }
    Some(top - second)
}

/// Labeled-count distribution over the new classes of the current state.
/// Centroids are kept as embedding sums accumulated in labeling order, so an
/// incremental update equals a full recomputation.
#[derive(Debug, Clone, Default)]
pub struct ClassDistribution {
    entries: BTreeMap<ClassId, DistEntry>,
}

#[derive(Debug, Clone)]
struct DistEntry {
    count: usize,
    emb_sum: Vec<f64>,
}

impl ClassDistribution {
    pub fn new() -> Self {
        ClassDistribution::default()
    }

    /// Rebuilds the distribution from labeled items in labeling order, under
    /// the given (latest) model.
    pub fn from_labeled(
        items: &[(SampleId, &[f64], ClassId)],
        embedder: &EmbeddingView,
    ) -> Result<Self> {
        let mut dist = ClassDistribution::new();
        for (_, features, label) in items {
            let e = embedder.embed(features)?;
            dist.record(*label, &e);
        }
        Ok(dist)
    }

    /// Folds one freshly labeled sample into the distribution.
    pub fn record(&mut self, class: ClassId, embedding: &[f64]) {
        let entry = self.entries.entry(class).or_insert_with(|| DistEntry {
            count: 0,
            emb_sum: vec![0.0; embedding.len()],
        });
        entry.count += 1;
        for (s, v) in entry.emb_sum.iter_mut().zip(embedding) {
            *s += v;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Classes with at least one labeled sample, ascending.
    pub fn detected_classes(&self) -> Vec<ClassId> {
        self.entries.keys().copied().collect()
    }

    pub fn counts(&self) -> BTreeMap<ClassId, usize> {
        self.entries.iter().map(|(c, e)| (*c, e.count)).collect()
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.entries.get(&class).map_or(0, |e| e.count)
    }

    pub fn mean_count(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let total: usize = self.entries.values().map(|e| e.count).sum();
        total as f64 / self.entries.len() as f64
    }

    /// Classes with labeled count strictly below the mean.
    pub fn minority(&self) -> Vec<ClassId> {
        let mean = self.mean_count();
        self.entries
            .iter()
            .filter(|(_, e)| (e.count as f64) < mean)
            .map(|(c, _)| *c)
            .collect()
    }

    /// Classes with labeled count at or above the mean.
    pub fn majority(&self) -> Vec<ClassId> {
        let mean = self.mean_count();
        self.entries
            .iter()
            .filter(|(_, e)| (e.count as f64) >= mean)
            .map(|(c, _)| *c)
            .collect()
    }

    /// Arithmetic mean of the embeddings of the class's labeled samples.
    pub fn centroid(&self, class: ClassId) -> Option<Vec<f64>> {
        self.entries.get(&class).map(|e| {
            e.emb_sum
                .iter()
                .map(|s| s / e.count as f64)
                .collect()
        })
    }

    fn min_centroid_distance(&self, embedding: &[f64], classes: &[ClassId]) -> f64 {
        let mut best = f64::INFINITY;
        for c in classes {
            if let Some(mu) = self.centroid(*c) {
                let d = euclidean(embedding, &mu);
                if d < best {
                    best = d;
                }
            }
        }
        best
    }
}

/// Distance to the closest minority centroid minus distance to the closest
/// majority centroid; negative values mean the sample leans minority.
pub fn relative_minority_distance(
    features: &[f64],
    dist: &ClassDistribution,
    embedder: &EmbeddingView,
) -> Result<f64> {
    let minority = dist.minority();
    let majority = dist.majority();
    if minority.is_empty() || majority.is_empty() {
        return Err(Error::DegenerateDistribution(format!(
            "minority={} majority={} classes",
            minority.len(),
            majority.len()
        )));
    }
    let e = embedder.embed(features)?;
    Ok(dist.min_centroid_distance(&e, &minority) - dist.min_centroid_distance(&e, &majority))
}

fn sorted_pool(pool: &[(SampleId, &[f64])]) -> Vec<(SampleId, Vec<f64>)> {
    let mut items: Vec<(SampleId, Vec<f64>)> =
        pool.iter().map(|(id, f)| (*id, f.to_vec())).collect();
    items.sort_by_key(|(id, _)| *id);
    items
}

/// Uniform selection of `k` distinct ids without replacement.
pub fn select_random(pool_ids: &[SampleId], k: usize, seed: u64) -> Result<Vec<SampleId>> {
    if k > pool_ids.len() {
        return Err(Error::Request(format!(
            "cannot select {k} from a pool of {}",
            pool_ids.len()
        )));
    }
    let mut ids = pool_ids.to_vec();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, ids.len(), k);
    Ok(picks.into_iter().map(|i| ids[i]).collect())
}

/// Greedy k-center selection: each pick maximizes its minimum embedding
/// distance to everything labeled so far, including earlier picks of the
/// same batch. Ties go to the lowest id.
pub fn select_coreset(
    pool: &[(SampleId, &[f64])],
    labeled_embeddings: &[Vec<f64>],
    k: usize,
    embedder: &EmbeddingView,
) -> Result<Vec<SampleId>> {
    if pool.is_empty() {
        return Err(Error::Request("core-set selection over an empty pool".into()));
    }
    if k > pool.len() {
        return Err(Error::Request(format!(
            "cannot select {k} from a pool of {}",
            pool.len()
        )));
    }
    if labeled_embeddings.is_empty() {
        return Err(Error::Request(
            "core-set needs a non-empty labeled reference set".into(),
        ));
    }
    let items = sorted_pool(pool);
    let embeddings: Vec<Vec<f64>> = items
        .iter()
        .map(|(_, f)| embedder.embed(f))
        .collect::<Result<_>>()?;

    // Running minimum distance of every candidate to the reference set.
    let mut min_dist: Vec<f64> = embeddings
        .iter()
        .map(|e| {
            labeled_embeddings
                .iter()
                .map(|r| euclidean(e, r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; items.len()];
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..items.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let chosen = best.expect("pool cannot be exhausted before k picks");
        taken[chosen] = true;
        picks.push(items[chosen].0);
        for i in 0..items.len() {
            if !taken[i] {
                let d = euclidean(&embeddings[i], &embeddings[chosen]);
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    Ok(picks)
}

fn restricted_probs(model: &LearnerModel, features: &[f64], detected: &[usize]) -> Result<Vec<f64>> {
    let p = model.predict_proba(features)?;
    detected
        .iter()
        .map(|&j| {
            p.get(j).copied().ok_or_else(|| {
                Error::Validation(format!("detected class index {j} outside model head"))
            })
        })
        .collect()
}

/// Top-k by prediction entropy over the detected classes (probabilities
/// renormalized over those classes). Ties go to the lowest id.
pub fn select_entropy(
    pool: &[(SampleId, &[f64])],
    k: usize,
    model: &LearnerModel,
    detected: &[usize],
) -> Result<Vec<SampleId>> {
    if pool.is_empty() {
        return Err(Error::Request("entropy selection over an empty pool".into()));
    }
    if k > pool.len() {
        return Err(Error::Request(format!(
            "cannot select {k} from a pool of {}",
            pool.len()
        )));
    }
    if detected.is_empty() {
        return Err(Error::Capability(
            "entropy needs at least one detected class".into(),
        ));
    }
    let items = sorted_pool(pool);
    let mut scored: Vec<(SampleId, f64)> = Vec::with_capacity(items.len());
    for (id, features) in &items {
        let mut p = restricted_probs(model, features, detected)?;
        let sum: f64 = p.iter().sum();
        if sum > 0.0 {
            for v in p.iter_mut() {
                *v /= sum;
            }
        }
        scored.push((*id, entropy_score(&p)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Margin sampling over the detected classes. `Standard` ranks ascending by
/// the top-2 gap (most uncertain first); `Literal` ranks descending.
pub fn select_margin(
    pool: &[(SampleId, &[f64])],
    k: usize,
    model: &LearnerModel,
    detected: &[usize],
    mode: MarginMode,
) -> Result<Vec<SampleId>> {
    if model.num_classes() < 2 || detected.len() < 2 {
        return Err(Error::Capability(
            "margin sampling needs at least 2 predictable classes".into(),
        ));
    }
    if pool.is_empty() {
        return Err(Error::Request("margin selection over an empty pool".into()));
    }
    if k > pool.len() {
        return Err(Error::Request(format!(
            "cannot select {k} from a pool of {}",
            pool.len()
        )));
    }
    let items = sorted_pool(pool);
    let mut scored: Vec<(SampleId, f64)> = Vec::with_capacity(items.len());
    for (id, features) in &items {
        let p = restricted_probs(model, features, detected)?;
        let m = margin_score(&p).expect("detected.len() checked >= 2");
        scored.push((*id, m));
    }
    match mode {
        MarginMode::Standard => scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
        MarginMode::Literal => scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
    }
    Ok(scored.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Mutable view over one state's labeling machinery. Every pick flows through
/// [`AcquisitionSession::label`], which reveals the label via the budgeted
/// oracle, refreshes the class distribution and appends a log event.
pub struct AcquisitionSession<'a> {
    pub state: usize,
    pub iteration: usize,
    pools: &'a mut PoolSet,
    budget: &'a mut BudgetLedger,
    dist: &'a mut ClassDistribution,
    embedder: EmbeddingView<'a>,
    events: &'a mut Vec<SelectionEvent>,
}

impl<'a> AcquisitionSession<'a> {
    pub fn new(
        state: usize,
        iteration: usize,
        pools: &'a mut PoolSet,
        budget: &'a mut BudgetLedger,
        dist: &'a mut ClassDistribution,
        embedder: EmbeddingView<'a>,
        events: &'a mut Vec<SelectionEvent>,
    ) -> Self {
        AcquisitionSession {
            state,
            iteration,
            pools,
            budget,
            dist,
            embedder,
            events,
        }
    }

    pub fn pools(&self) -> &PoolSet {
        self.pools
    }

    pub fn dist(&self) -> &ClassDistribution {
        self.dist
    }

    pub fn embedder(&self) -> &EmbeddingView<'a> {
        &self.embedder
    }

    pub fn label(&mut self, af: &str, id: SampleId) -> Result<ClassId> {
        let features = self
            .pools
            .features_of(id)
            .ok_or(Error::UnknownSample(id))?
            .to_vec();
        let label = self.pools.oracle_label(id, self.budget)?;
        let embedding = self.embedder.embed(&features)?;
        self.dist.record(label, &embedding);
        self.events.push(SelectionEvent {
            state: self.state,
            iteration: self.iteration,
            af: af.to_string(),
            sample_id: id,
            revealed_label: label,
            remaining_budget: self.budget.remaining(),
        });
        Ok(label)
    }
}

/// Balanced core-set: each greedy step first filters the pool to samples
/// leaning minority (relative distance < 0), then applies the core-set rule;
/// an empty filter falls back to the plain core-set step. The distribution
/// is refreshed after every single pick.
pub fn select_balanced_coreset(
    session: &mut AcquisitionSession,
    base_refs: &[Vec<f64>],
    k: usize,
) -> Result<Vec<SampleId>> {
    if session.pools.unlabeled_len() == 0 {
        return Err(Error::Request(
            "balanced core-set selection over an empty pool".into(),
        ));
    }
    if k > session.pools.unlabeled_len() {
        return Err(Error::Request(format!(
            "cannot select {k} from a pool of {}",
            session.pools.unlabeled_len()
        )));
    }

    let mut refs: Vec<Vec<f64>> = base_refs.to_vec();
    for (_, features, _) in session.pools.labeled_items() {
        refs.push(session.embedder.embed(features)?);
    }

    let mut picks = Vec::with_capacity(k);
    for _ in 0..k {
        let items: Vec<(SampleId, Vec<f64>)> = session
            .pools
            .unlabeled_items()
            .iter()
            .map(|(id, f)| (*id, f.to_vec()))
            .collect();
        let embeddings: Vec<Vec<f64>> = items
            .iter()
            .map(|(_, f)| session.embedder.embed(f))
            .collect::<Result<_>>()?;

        let minority = session.dist.minority();
        let majority = session.dist.majority();
        let mut candidates: Vec<usize> = Vec::new();
        if !minority.is_empty() && !majority.is_empty() {
            for (i, e) in embeddings.iter().enumerate() {
                let rel = session.dist.min_centroid_distance(e, &minority)
                    - session.dist.min_centroid_distance(e, &majority);
                if rel < 0.0 {
                    candidates.push(i);
                }
            }
        }
        if candidates.is_empty() {
            candidates = (0..items.len()).collect();
        }

        let mut best: Option<(usize, f64)> = None;
        for &i in &candidates {
            let d = refs
                .iter()
                .map(|r| euclidean(&embeddings[i], r))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (chosen, _) = best.expect("candidate set is never empty here");
        let id = items[chosen].0;
        session.label("b-core", id)?;
        refs.push(embeddings[chosen].clone());
        picks.push(id);
    }
    Ok(picks)
}

/// Poorest-class-first: each step targets the class with the fewest labeled
/// samples (random tie-break), picking the pool sample closest to that
/// class's centroid and far from every majority centroid.
pub fn select_poorest_first(
    session: &mut AcquisitionSession,
    k: usize,
    seed: u64,
) -> Result<Vec<SampleId>> {
    if session.dist.is_empty() {
        return Err(Error::State(
            "poorest-first needs at least one labeled new class".into(),
        ));
    }
    if k > session.pools.unlabeled_len() {
        return Err(Error::Request(format!(
            "cannot select {k} from a pool of {}",
            session.pools.unlabeled_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k {
        let minority = session.dist.minority();
        let candidates = if minority.is_empty() {
            session.dist.detected_classes()
        } else {
            minority
        };
        let min_count = candidates
            .iter()
            .map(|c| session.dist.count(*c))
            .min()
            .expect("candidates is non-empty");
        let tied: Vec<ClassId> = candidates
            .into_iter()
            .filter(|c| session.dist.count(*c) == min_count)
            .collect();
        let poor = if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.gen_range(0..tied.len())]
        };
        let mu_poor = session
            .dist
            .centroid(poor)
            .expect("poor class is detected");
        let majority = session.dist.majority();

        let items = session.pools.unlabeled_items();
        let mut best: Option<(SampleId, f64)> = None;
        for (id, features) in &items {
            let e = session.embedder.embed(features)?;
            let to_poor = euclidean(&e, &mu_poor);
            let to_majority = if majority.is_empty() {
                0.0
            } else {
                session.dist.min_centroid_distance(&e, &majority)
            };
            let score = to_poor - to_majority;
            if best.is_none_or(|(_, bs)| score < bs) {
                best = Some((*id, score));
            }
        }
        let (id, _) = best.expect("pool checked non-empty");
        session.label("poor", id)?;
        picks.push(id);
    }
    Ok(picks)
}
