//! Experiment orchestration: declarative configuration, the per-run state
//! loop (initial fully supervised state, then iterative two-phase active
//! learning with fine-tuning and memory updates), upper-bound runs and the
//! run-directory writer.

mod report;
mod run;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionPlan, ClassicalAf, MarginMode, SelectionEvent};
use crate::data::{
    generate_gaussian_stream, load_feature_dataset, load_feature_dataset_with_test, ClassId,
    ClassIncrementalStream, GeneratorSpec, SampleId,
};
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::metrics::StdMode;

pub use report::{atomic_write, write_run_directory};
pub use run::{
    run_experiment, run_joint_upper_bound, run_supervised_upper_bound, ClassRegistry, Runner,
};

/// Synthetic stream description: Gaussian class blobs with counts targeting
/// a coefficient of variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticStreamSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub mean_per_class: f64,
    pub target_cv: f64,
    pub min_per_class: usize,
    pub class_center_scale: f64,
    pub class_spread: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticStreamSpec {
    fn default() -> Self {
        SyntheticStreamSpec {
            num_classes: 20,
            dim: 16,
            mean_per_class: 100.0,
            target_cv: 0.75,
            min_per_class: 25,
            class_center_scale: 1.2,
            class_spread: 1.0,
            test_per_class: 50,
            seed: 97,
        }
    }
}

/// File-backed stream: a dataset CSV, optionally with a companion test CSV
/// (otherwise a stratified 80/20 split is held out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileStreamSpec {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_stream_seed")]
    pub seed: u64,
}

fn default_stream_seed() -> u64 {
    97
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSource {
    Synthetic(SyntheticStreamSpec),
    File(FileStreamSpec),
}

impl Default for StreamSource {
    fn default() -> Self {
        StreamSource::Synthetic(SyntheticStreamSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSettings {
    pub kind: LearnerKind,
    pub hidden_dim: usize,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            kind: LearnerKind::Linear,
            hidden_dim: 32,
        }
    }
}

/// SGD settings shared by every fine-tune; the initial state trains longer
/// than the per-iteration fine-tunes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub initial_epochs: usize,
    pub al_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_plateau_patience: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            initial_epochs: 50,
            al_epochs: 20,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_plateau_patience: 10,
            lr_decay_factor: 0.1,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_plateau_patience: self.lr_plateau_patience,
            lr_decay_factor: self.lr_decay_factor,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.initial_epochs == 0 || self.al_epochs == 0 {
            return Err(Error::Validation("epoch counts must be >= 1".into()));
        }
        self.to_train_config(self.al_epochs, 0).validate()
    }
}

/// What a run executes: the active-learning pipeline or one of the two
/// upper bounds (fully supervised incremental / joint non-incremental).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Al,
    Sil,
    Noil,
}


/// Full declarative experiment description. Every field except the stream
/// source falls back to the default desk-scale benchmark value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default)]
    pub mode: RunMode,
    pub stream: StreamSource,
    #[serde(default = "default_num_states")]
    pub num_states: usize,
    #[serde(default = "default_memory_capacity")]
    pub memory_capacity: usize,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default)]
    pub plan: AcquisitionPlan,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub training: TrainSettings,
    #[serde(default = "default_num_runs")]
    pub num_runs: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub margin_mode: MarginMode,
    #[serde(default)]
    pub normalize_embeddings: bool,
    #[serde(default)]
    pub std_mode: StdMode,
}

fn default_label() -> String {
    "synthetic-default".into()
}

fn default_num_states() -> usize {
    5
}

fn default_memory_capacity() -> usize {
    40
}

fn default_budget() -> f64 {
    0.10
}

fn default_num_runs() -> usize {
    5
}

fn default_base_seed() -> u64 {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            label: default_label(),
            mode: RunMode::Al,
            stream: StreamSource::default(),
            num_states: default_num_states(),
            memory_capacity: default_memory_capacity(),
            budget: default_budget(),
            plan: AcquisitionPlan::default(),
            learner: LearnerSettings::default(),
            training: TrainSettings::default(),
            num_runs: default_num_runs(),
            base_seed: default_base_seed(),
            margin_mode: MarginMode::Standard,
            normalize_embeddings: false,
            std_mode: StdMode::Sample,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::Config("num_states must be >= 2".into()));
        }
        if !(self.budget.is_finite() && self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::Config(format!(
                "budget {} must be in (0, 1]",
                self.budget
            )));
        }
        if self.num_runs == 0 {
            return Err(Error::Config("num_runs must be >= 1".into()));
        }
        self.plan.validate()?;
        self.training.validate()?;
        if self.learner.kind == LearnerKind::Mlp && self.learner.hidden_dim == 0 {
            return Err(Error::Config("mlp learner needs hidden_dim >= 1".into()));
        }
        if let StreamSource::Synthetic(s) = &self.stream {
            if s.num_classes < self.num_states {
                return Err(Error::Config(format!(
                    "{} classes cannot fill {} states",
                    s.num_classes, self.num_states
                )));
            }
        }
        Ok(())
    }
}

/// Builds the stream described by the configuration.
pub fn build_stream(cfg: &ExperimentConfig) -> Result<ClassIncrementalStream> {
    match &cfg.stream {
        StreamSource::Synthetic(s) => {
            let mut spec = GeneratorSpec::with_target_cv(
                s.num_classes,
                s.dim,
                s.mean_per_class,
                s.target_cv,
                s.min_per_class,
                s.seed,
            )?;
            spec.class_center_scale = s.class_center_scale;
            spec.class_spread = s.class_spread;
            spec.test_per_class = s.test_per_class;
            generate_gaussian_stream(&spec, cfg.num_states)
        }
        StreamSource::File(f) => match &f.test {
            Some(test) => {
                load_feature_dataset_with_test(&f.train, test, cfg.num_states, f.seed)
            }
            None => load_feature_dataset(&f.train, cfg.num_states, f.seed),
        },
    }
}

/// Validates the configuration exactly as the runner does, including stream
/// construction and per-state budget feasibility. `validate-config` and the
/// runner share this path, so they accept and reject the same configs.
pub fn preflight(cfg: &ExperimentConfig) -> Result<ClassIncrementalStream> {
    cfg.validate()?;
    let stream = build_stream(cfg)?;
    if cfg.mode == RunMode::Al {
        for t in 1..stream.num_states() {
            let pool = stream.states[t].train.len();
            let total = (cfg.budget * pool as f64).floor() as usize;
            if total < cfg.plan.iterations() {
                return Err(Error::Config(format!(
                    "state {t} budget {total} is below the {} iterations (one label per iteration)",
                    cfg.plan.iterations()
                )));
            }
        }
        if cfg.plan.classical == ClassicalAf::Marg && stream.states[0].classes.len() < 2 {
            return Err(Error::Config(
                "margin sampling needs at least 2 initial classes".into(),
            ));
        }
    }
    Ok(stream)
}

/// Metrics of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    /// Calibrated top-1 accuracy on the cumulative test set, per state.
    pub per_state_accuracy: Vec<f64>,
    /// Mean accuracy over the incremental states (state 0 excluded).
    pub avg_incremental_accuracy: f64,
    /// cv of labeled counts over each state's new classes at state end.
    pub per_state_labeled_cv: Vec<f64>,
    /// Mean of `per_state_labeled_cv` over the incremental states.
    pub mean_labeled_cv: f64,
    pub n_labeled_per_state: Vec<usize>,
    /// Relative path of the JSON-lines event log, filled by the writer.
    pub event_log: String,
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub events: Vec<SelectionEvent>,
    #[serde(skip)]
    pub memory_snapshots: Vec<BTreeMap<ClassId, Vec<SampleId>>>,
}

/// Across-run aggregation of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub mode: RunMode,
    pub num_runs: usize,
    pub std_mode: StdMode,
    pub mean_avg_incremental_accuracy: f64,
    pub std_avg_incremental_accuracy: f64,
    pub mean_labeled_cv: f64,
    pub std_labeled_cv: f64,
    pub new_classes_by_state: BTreeMap<usize, Vec<ClassId>>,
    pub runs: Vec<RunReport>,
}
