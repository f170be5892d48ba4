//! The per-run state loop and across-run aggregation.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::acquisition::{
    select_balanced_coreset, select_coreset, select_entropy, select_margin, select_poorest_first,
    select_random, AcquisitionSession, BalancingAf, ClassDistribution, ClassicalAf, EmbeddingView,
    SelectionEvent,
};
use crate::data::{BudgetLedger, ClassId, ClassIncrementalStream, PoolSet, Sample};
use crate::error::{Error, Result};
use crate::learner::{
    calibrated_predict, train, train_with_schedule, ClassPriorTable, LabeledExample, LearnerModel,
    LrSchedule, ModelKind,
};
use crate::memory::{update_memory, ExemplarMemory};
use crate::metrics::{self, ConfusionSummary};
use crate::pipeline::{
    preflight, AggregateReport, ExperimentConfig, LearnerKind, RunMode, RunReport,
};
use crate::seeding::{derive_seed, tag};

/// Stable mapping between global class ids and model head indices, in the
/// order classes are introduced by the stream.
#[derive(Debug, Clone)]
pub struct ClassRegistry {
    order: Vec<ClassId>,
    index: BTreeMap<ClassId, usize>,
}

impl ClassRegistry {
    pub fn from_stream(stream: &ClassIncrementalStream) -> Self {
        let mut order = Vec::new();
        for state in &stream.states {
            order.extend(state.classes.iter().copied());
        }
        let index = order.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        ClassRegistry { order, index }
    }

    pub fn index_of(&self, class: ClassId) -> usize {
        self.index[&class]
    }

    pub fn class_at(&self, index: usize) -> ClassId {
        self.order[index]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Per-state outcome of one run.
pub struct StateMetrics {
    pub accuracy: f64,
    pub labeled_cv: f64,
    pub n_labeled: usize,
}

/// Executes runs of one experiment configuration over a fixed stream.
pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    stream: &'a ClassIncrementalStream,
    registry: ClassRegistry,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, stream: &'a ClassIncrementalStream) -> Self {
        let registry = ClassRegistry::from_stream(stream);
        Runner {
            cfg,
            stream,
            registry,
        }
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    fn model_kind(&self) -> (ModelKind, usize) {
        match self.cfg.learner.kind {
            LearnerKind::Linear => (ModelKind::LinearSoftmax, 0),
            LearnerKind::Mlp => (ModelKind::OneHiddenMlp, self.cfg.learner.hidden_dim),
        }
    }

    /// Classes recognizable after state `t`.
    fn classes_after(&self, t: usize) -> usize {
        self.stream.states[..=t].iter().map(|s| s.classes.len()).sum()
    }

    fn view<'m>(&self, model: &'m LearnerModel) -> EmbeddingView<'m> {
        EmbeddingView::new(model, self.cfg.normalize_embeddings)
    }

    /// Training examples (memory first, then state labels in labeling order)
    /// plus per-head-index counts for the prior table.
    fn assemble_training_set(
        &self,
        memory: &ExemplarMemory,
        state_labeled: &[(u64, &[f64], ClassId)],
        num_classes: usize,
    ) -> (Vec<LabeledExample>, Vec<usize>) {
        let mut examples = Vec::new();
        let mut counts = vec![0usize; num_classes];
        for sample in memory.all_samples() {
            let idx = self.registry.index_of(sample.true_label());
            counts[idx] += 1;
            examples.push((sample.features.clone(), idx));
        }
        for (_, features, label) in state_labeled {
            let idx = self.registry.index_of(*label);
            counts[idx] += 1;
            examples.push((features.to_vec(), idx));
        }
        (examples, counts)
    }

    /// Prior table for calibrated inference. Classes that received no labels
    /// keep a floor count of 1 so the rectification stays defined.
    fn priors_from_counts(&self, counts: &[usize]) -> Result<ClassPriorTable> {
        ClassPriorTable::new(counts.iter().map(|&c| c.max(1)).collect())
    }

    /// Calibrated top-1 accuracy on the cumulative test set of state `t`.
    fn evaluate(&self, model: &LearnerModel, priors: &ClassPriorTable, t: usize) -> Result<f64> {
        let test = self.stream.cumulative_test(t);
        let mut pairs = Vec::with_capacity(test.len());
        for sample in test {
            let truth = self.registry.index_of(sample.true_label());
            let (_, pred) = calibrated_predict(model, priors, &sample.features)?;
            pairs.push((truth, pred));
        }
        Ok(ConfusionSummary::from_pairs(&pairs, model.num_classes())?.accuracy())
    }

    /// cv of labeled counts over the state's new classes (zeros included).
    fn labeled_cv(&self, t: usize, counts: &BTreeMap<ClassId, usize>) -> Result<f64> {
        let full: Vec<usize> = self.stream.states[t]
            .classes
            .iter()
            .map(|c| *counts.get(c).unwrap_or(&0))
            .collect();
        metrics::cv_of_counts(&full)
    }

    /// Fully supervised initial state: trains from scratch on all state-0
    /// data and fills the memory by herding within quota.
    pub fn initial_state(&self, run_seed: u64) -> Result<(LearnerModel, ExemplarMemory, StateMetrics)> {
        let state0 = &self.stream.states[0];
        let n0 = state0.classes.len();
        let (kind, hidden) = self.model_kind();
        let model = LearnerModel::new(
            kind,
            self.stream.dim,
            hidden,
            n0,
            derive_seed(run_seed, &[tag::MODEL_INIT, 0]),
        )?;
        let mut counts = vec![0usize; n0];
        let examples: Vec<LabeledExample> = state0
            .train
            .iter()
            .map(|s| {
                let idx = self.registry.index_of(s.true_label());
                counts[idx] += 1;
                (s.features.clone(), idx)
            })
            .collect();
        let tc = self.cfg.training.to_train_config(
            self.cfg.training.initial_epochs,
            derive_seed(run_seed, &[tag::TRAIN, 0, 0]),
        );
        let trained = train(&model, &examples, &tc)?;

        let mut by_class: BTreeMap<ClassId, Vec<Sample>> = BTreeMap::new();
        for s in &state0.train {
            by_class.entry(s.true_label()).or_default().push(s.clone());
        }
        let memory = update_memory(
            &ExemplarMemory::new(self.cfg.memory_capacity),
            &by_class,
            &self.view(&trained),
        )?;

        let priors = self.priors_from_counts(&counts)?;
        let accuracy = self.evaluate(&trained, &priors, 0)?;
        let label_counts: BTreeMap<ClassId, usize> = by_class
            .iter()
            .map(|(c, v)| (*c, v.len()))
            .collect();
        let labeled_cv = self.labeled_cv(0, &label_counts)?;
        let n_labeled = state0.train.len();
        Ok((
            trained,
            memory,
            StateMetrics {
                accuracy,
                labeled_cv,
                n_labeled,
            },
        ))
    }

    /// Head indices usable for uncertainty scoring: all past classes plus the
    /// state's new classes that already have at least one label.
    fn detected_indices(&self, n_past: usize, dist: &ClassDistribution) -> Vec<usize> {
        let mut detected: Vec<usize> = (0..n_past).collect();
        detected.extend(dist.detected_classes().iter().map(|c| self.registry.index_of(*c)));
        detected.sort_unstable();
        detected.dedup();
        detected
    }

    fn memory_embeddings(&self, memory: &ExemplarMemory, view: &EmbeddingView) -> Result<Vec<Vec<f64>>> {
        memory
            .all_samples()
            .iter()
            .map(|s| view.embed(&s.features))
            .collect()
    }

    /// One incremental state: classical acquisition with the previous model,
    /// head expansion, then balancing iterations each followed by fine-tuning
    /// with a learning-rate schedule shared across the whole state.
    #[allow(clippy::too_many_arguments)]
    pub fn incremental_state(
        &self,
        t: usize,
        prev_model: &LearnerModel,
        memory: &ExemplarMemory,
        run_seed: u64,
        events: &mut Vec<SelectionEvent>,
    ) -> Result<(LearnerModel, ExemplarMemory, StateMetrics)> {
        let state = &self.stream.states[t];
        let n_past = self.classes_after(t - 1);
        let n_now = self.classes_after(t);
        let iterations = self.cfg.plan.iterations();

        let mut pool = PoolSet::new(state.train.clone());
        let total_budget = (self.cfg.budget * pool.initial_size() as f64).floor() as usize;
        if total_budget < iterations {
            return Err(Error::Config(format!(
                "state {t} budget {total_budget} cannot cover {iterations} iterations"
            )));
        }
        let sub_budgets = self.cfg.plan.sub_budgets(total_budget);
        let mut budget = BudgetLedger::new(total_budget);
        let mut schedule = LrSchedule::new(self.cfg.training.lr);

        // --- iteration 1: classical phase with the previous model ---
        let view = self.view(prev_model);
        let mut dist = ClassDistribution::new();
        let k1 = sub_budgets[0];
        {
            let select_seed = derive_seed(run_seed, &[tag::SELECT, t as u64, 0]);
            let picked = match self.cfg.plan.classical {
                ClassicalAf::Rand => select_random(&pool.unlabeled_ids(), k1, select_seed)?,
                ClassicalAf::Core => {
                    let mut refs = self.memory_embeddings(memory, &view)?;
                    let mut remaining = k1;
                    let mut seeded: Option<u64> = None;
                    if refs.is_empty() && remaining > 0 {
                        // cold start: seed the reference set with one random label
                        let seed_pick = select_random(&pool.unlabeled_ids(), 1, select_seed)?[0];
                        seeded = Some(seed_pick);
                        remaining -= 1;
                        let features = pool.features_of(seed_pick).unwrap().to_vec();
                        refs.push(view.embed(&features)?);
                    }
                    let mut ids = select_coreset(&pool.unlabeled_items(), &refs, remaining, &view)?;
                    if let Some(first) = seeded {
                        ids.insert(0, first);
                    }
                    ids
                }
                ClassicalAf::Ent => {
                    let detected: Vec<usize> = (0..n_past).collect();
                    select_entropy(&pool.unlabeled_items(), k1, prev_model, &detected)?
                }
                ClassicalAf::Marg => {
                    let detected: Vec<usize> = (0..n_past).collect();
                    select_margin(
                        &pool.unlabeled_items(),
                        k1,
                        prev_model,
                        &detected,
                        self.cfg.margin_mode,
                    )?
                }
            };
            let mut session =
                AcquisitionSession::new(t, 1, &mut pool, &mut budget, &mut dist, view, events);
            for id in picked {
                session.label(self.cfg.plan.classical.name(), id)?;
            }
        }

        let expanded = prev_model.expand_head(
            n_now,
            0.01,
            derive_seed(run_seed, &[tag::EXPAND, t as u64]),
        )?;
        let (examples, _) = self.assemble_training_set(memory, &pool.labeled_items(), n_now);
        let tc = self.cfg.training.to_train_config(
            self.cfg.training.al_epochs,
            derive_seed(run_seed, &[tag::TRAIN, t as u64, 1]),
        );
        let mut current = train_with_schedule(&expanded, &examples, &tc, &mut schedule)?;

        // --- iterations 2..I: balancing phase with the latest model ---
        for (i, &k) in sub_budgets.iter().enumerate().skip(1) {
            if k == 0 {
                log::debug!("state {t} iteration {} has an empty sub-budget", i + 1);
                continue;
            }
            if pool.unlabeled_len() == 0 {
                log::warn!("state {t} pool exhausted before iteration {}", i + 1);
                break;
            }
            let view = self.view(&current);
            let mut dist = ClassDistribution::from_labeled(&pool.labeled_items(), &view)?;
            let select_seed = derive_seed(run_seed, &[tag::SELECT, t as u64, i as u64]);
            let balancing = self.cfg.plan.balancing;
            {
                let mut session = AcquisitionSession::new(
                    t,
                    i + 1,
                    &mut pool,
                    &mut budget,
                    &mut dist,
                    view,
                    events,
                );
                match balancing {
                    BalancingAf::Rand => {
                        let ids = select_random(&session.pools().unlabeled_ids(), k, select_seed)?;
                        for id in ids {
                            session.label("rand", id)?;
                        }
                    }
                    BalancingAf::Poor => {
                        select_poorest_first(&mut session, k, select_seed)?;
                    }
                    BalancingAf::BCore => {
                        let base_refs = self.memory_embeddings(memory, session.embedder())?;
                        select_balanced_coreset(&mut session, &base_refs, k)?;
                    }
                    BalancingAf::Same => {
                        self.replay_classical(&mut session, memory, k, n_past, select_seed)?;
                    }
                }
            }
            let (examples, _) = self.assemble_training_set(memory, &pool.labeled_items(), n_now);
            let tc = self.cfg.training.to_train_config(
                self.cfg.training.al_epochs,
                derive_seed(run_seed, &[tag::TRAIN, t as u64, (i + 1) as u64]),
            );
            current = train_with_schedule(&current, &examples, &tc, &mut schedule)?;
        }
        debug_assert_eq!(budget.issued(), total_budget);

        // --- state end: calibrated evaluation and memory update ---
        let (_, counts) = self.assemble_training_set(memory, &pool.labeled_items(), n_now);
        let priors = self.priors_from_counts(&counts)?;
        let accuracy = self.evaluate(&current, &priors, t)?;
        let labeled_cv = self.labeled_cv(t, &pool.labeled_counts())?;
        let n_labeled = pool.labeled_len();
        let new_memory = update_memory(memory, &pool.labeled_by_class(), &self.view(&current))?;
        Ok((
            current,
            new_memory,
            StateMetrics {
                accuracy,
                labeled_cv,
                n_labeled,
            },
        ))
    }

    /// Replays the classical function during balancing iterations (the
    /// rand-rand / core-core / ent-ent / marg-marg baselines).
    fn replay_classical(
        &self,
        session: &mut AcquisitionSession,
        memory: &ExemplarMemory,
        k: usize,
        n_past: usize,
        select_seed: u64,
    ) -> Result<()> {
        let af = self.cfg.plan.classical;
        let ids = match af {
            ClassicalAf::Rand => select_random(&session.pools().unlabeled_ids(), k, select_seed)?,
            ClassicalAf::Core => {
                let mut refs = self.memory_embeddings(memory, session.embedder())?;
                for (_, features, _) in session.pools().labeled_items() {
                    refs.push(session.embedder().embed(features)?);
                }
                select_coreset(&session.pools().unlabeled_items(), &refs, k, session.embedder())?
            }
            ClassicalAf::Ent => {
                let detected = self.detected_indices(n_past, session.dist());
                select_entropy(
                    &session.pools().unlabeled_items(),
                    k,
                    session.embedder().model(),
                    &detected,
                )?
            }
            ClassicalAf::Marg => {
                let detected = self.detected_indices(n_past, session.dist());
                select_margin(
                    &session.pools().unlabeled_items(),
                    k,
                    session.embedder().model(),
                    &detected,
                    self.cfg.margin_mode,
                )?
            }
        };
        for id in ids {
            session.label(af.name(), id)?;
        }
        Ok(())
    }

    /// One active-learning run.
    pub fn run_al(&self, run_seed: u64) -> Result<RunReport> {
        let start = Instant::now();
        let mut events = Vec::new();
        let mut snapshots = Vec::new();
        let (mut model, mut memory, m0) = self.initial_state(run_seed)?;
        let mut accs = vec![m0.accuracy];
        let mut cvs = vec![m0.labeled_cv];
        let mut labeled = vec![m0.n_labeled];
        snapshots.push(memory.snapshot_ids());
        for t in 1..self.stream.num_states() {
            let (next_model, next_memory, m) =
                self.incremental_state(t, &model, &memory, run_seed, &mut events)?;
            model = next_model;
            memory = next_memory;
            accs.push(m.accuracy);
            cvs.push(m.labeled_cv);
            labeled.push(m.n_labeled);
            snapshots.push(memory.snapshot_ids());
        }
        self.finish_report(run_seed, accs, cvs, labeled, events, snapshots, start)
    }

    /// Supervised incremental upper bound: every state fully labeled, one
    /// fine-tune per state with the combined epoch budget of the AL rounds.
    pub fn run_sil(&self, run_seed: u64) -> Result<RunReport> {
        let start = Instant::now();
        let (mut model, mut memory, m0) = self.initial_state(run_seed)?;
        let mut accs = vec![m0.accuracy];
        let mut cvs = vec![m0.labeled_cv];
        let mut labeled = vec![m0.n_labeled];
        let mut snapshots = vec![memory.snapshot_ids()];
        let epochs = self.cfg.training.al_epochs * self.cfg.plan.iterations();
        for t in 1..self.stream.num_states() {
            let state = &self.stream.states[t];
            let n_now = self.classes_after(t);
            let expanded = model.expand_head(
                n_now,
                0.01,
                derive_seed(run_seed, &[tag::EXPAND, t as u64]),
            )?;
            let labeled_items: Vec<(u64, &[f64], ClassId)> = state
                .train
                .iter()
                .map(|s| (s.id, s.features.as_slice(), s.true_label()))
                .collect();
            let (examples, counts) = self.assemble_training_set(&memory, &labeled_items, n_now);
            let tc = self.cfg.training.to_train_config(
                epochs,
                derive_seed(run_seed, &[tag::TRAIN, t as u64, 1]),
            );
            model = train(&expanded, &examples, &tc)?;
            let priors = self.priors_from_counts(&counts)?;
            accs.push(self.evaluate(&model, &priors, t)?);
            let full_counts: BTreeMap<ClassId, usize> = state
                .train
                .iter()
                .fold(BTreeMap::new(), |mut acc, s| {
                    *acc.entry(s.true_label()).or_insert(0) += 1;
                    acc
                });
            cvs.push(self.labeled_cv(t, &full_counts)?);
            labeled.push(state.train.len());
            let mut by_class: BTreeMap<ClassId, Vec<Sample>> = BTreeMap::new();
            for s in &state.train {
                by_class.entry(s.true_label()).or_default().push(s.clone());
            }
            memory = update_memory(&memory, &by_class, &self.view(&model))?;
            snapshots.push(memory.snapshot_ids());
        }
        self.finish_report(run_seed, accs, cvs, labeled, Vec::new(), snapshots, start)
    }

    /// Joint non-incremental upper bound: one model over all data at once.
    pub fn run_noil(&self, run_seed: u64) -> Result<RunReport> {
        let start = Instant::now();
        let total_classes = self.registry.len();
        let (kind, hidden) = self.model_kind();
        let model = LearnerModel::new(
            kind,
            self.stream.dim,
            hidden,
            total_classes,
            derive_seed(run_seed, &[tag::MODEL_INIT, 1]),
        )?;
        let mut counts = vec![0usize; total_classes];
        let mut examples = Vec::new();
        for state in &self.stream.states {
            for s in &state.train {
                let idx = self.registry.index_of(s.true_label());
                counts[idx] += 1;
                examples.push((s.features.clone(), idx));
            }
        }
        let tc = self.cfg.training.to_train_config(
            self.cfg.training.initial_epochs,
            derive_seed(run_seed, &[tag::TRAIN, u64::MAX, 0]),
        );
        let trained = train(&model, &examples, &tc)?;
        let priors = self.priors_from_counts(&counts)?;
        let accuracy = self.evaluate(&trained, &priors, self.stream.num_states() - 1)?;
        let cv = metrics::cv_of_counts(&counts)?;
        let elapsed = start.elapsed().as_secs_f64();
        Ok(RunReport {
            seed: run_seed,
            per_state_accuracy: vec![accuracy],
            avg_incremental_accuracy: accuracy,
            per_state_labeled_cv: vec![cv],
            mean_labeled_cv: cv,
            n_labeled_per_state: vec![examples.len()],
            event_log: String::new(),
            wall_clock_seconds: elapsed,
            events: Vec::new(),
            memory_snapshots: Vec::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_report(
        &self,
        run_seed: u64,
        accs: Vec<f64>,
        cvs: Vec<f64>,
        labeled: Vec<usize>,
        events: Vec<SelectionEvent>,
        snapshots: Vec<BTreeMap<ClassId, Vec<u64>>>,
        start: Instant,
    ) -> Result<RunReport> {
        let avg = metrics::average_incremental_accuracy(&accs)?;
        let incremental_cvs = &cvs[1..];
        let mean_cv = incremental_cvs.iter().sum::<f64>() / incremental_cvs.len() as f64;
        Ok(RunReport {
            seed: run_seed,
            per_state_accuracy: accs,
            avg_incremental_accuracy: avg,
            per_state_labeled_cv: cvs,
            mean_labeled_cv: mean_cv,
            n_labeled_per_state: labeled,
            event_log: String::new(),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            events,
            memory_snapshots: snapshots,
        })
    }
}

fn aggregate(cfg: &ExperimentConfig, stream: &ClassIncrementalStream, runs: Vec<RunReport>) -> AggregateReport {
    let accs: Vec<f64> = runs.iter().map(|r| r.avg_incremental_accuracy).collect();
    let cvs: Vec<f64> = runs.iter().map(|r| r.mean_labeled_cv).collect();
    let (mean_acc, std_acc) = metrics::mean_std(&accs, cfg.std_mode);
    let (mean_cv, std_cv) = metrics::mean_std(&cvs, cfg.std_mode);
    let new_classes_by_state = stream
        .states
        .iter()
        .enumerate()
        .map(|(t, s)| (t, s.classes.clone()))
        .collect();
    AggregateReport {
        label: cfg.label.clone(),
        mode: cfg.mode,
        num_runs: cfg.num_runs,
        std_mode: cfg.std_mode,
        mean_avg_incremental_accuracy: mean_acc,
        std_avg_incremental_accuracy: std_acc,
        mean_labeled_cv: mean_cv,
        std_labeled_cv: std_cv,
        new_classes_by_state,
        runs,
    }
}

/// Runs `num_runs` seeded runs of the configured mode and aggregates the
/// results. Configurations sharing the same classical function and base seed
/// derive identical iteration-1 seeds, so their initial labelings coincide.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let stream = preflight(cfg)?;
    let runner = Runner::new(cfg, &stream);
    let mut runs = Vec::with_capacity(cfg.num_runs);
    for r in 0..cfg.num_runs {
        let run_seed = cfg.base_seed + r as u64;
        let report = match cfg.mode {
            RunMode::Al => runner.run_al(run_seed)?,
            RunMode::Sil => runner.run_sil(run_seed)?,
            RunMode::Noil => runner.run_noil(run_seed)?,
        };
        runs.push(report);
    }
    Ok(aggregate(cfg, &stream, runs))
}

/// Fully supervised incremental upper bound (budget 1.0, no AL iterations).
pub fn run_supervised_upper_bound(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let mut cfg = cfg.clone();
    cfg.mode = RunMode::Sil;
    run_experiment(&cfg)
}

/// Joint non-incremental upper bound (all data trained at once).
pub fn run_joint_upper_bound(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let mut cfg = cfg.clone();
    cfg.mode = RunMode::Noil;
    run_experiment(&cfg)
}
