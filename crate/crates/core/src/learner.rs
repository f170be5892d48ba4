//! Differentiable classifier supplying embeddings, class probabilities,
//! SGD training with a plateau learning-rate schedule, and threshold-
//! calibrated inference that rescales scores by inverse class priors.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Softmax regression; the embedding is the input itself.
    LinearSoftmax,
    /// One rectified hidden layer; the embedding is the hidden activation.
    OneHiddenMlp,
}

/// A classifier over `num_classes` classes with deterministic, seed-derived
/// initialization. Models are immutable values: training and head expansion
/// return new models.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerModel {
    kind: ModelKind,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    hidden_w: Vec<f64>, // hidden_dim x input_dim, row-major
    hidden_b: Vec<f64>,
    head_w: Vec<f64>, // num_classes x embed_dim, row-major
    head_b: Vec<f64>,
    rng_seed: u64,
}

impl LearnerModel {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Validation(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        if kind == ModelKind::OneHiddenMlp && hidden_dim == 0 {
            return Err(Error::Validation("MLP needs hidden_dim >= 1".into()));
        }
        let hidden_dim = if kind == ModelKind::LinearSoftmax {
            0
        } else {
            hidden_dim
        };
        let embed_dim = if hidden_dim == 0 { input_dim } else { hidden_dim };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform_init = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        };
        let hidden_w = uniform_init(hidden_dim * input_dim, input_dim);
        let hidden_b = vec![0.0; hidden_dim];
        let head_w = uniform_init(num_classes * embed_dim, embed_dim);
        let head_b = vec![0.0; num_classes];
        Ok(LearnerModel {
            kind,
            input_dim,
            hidden_dim,
            num_classes,
            hidden_w,
            hidden_b,
            head_w,
            head_b,
            rng_seed: seed,
        })
    }

    /// Builds a model from explicit parameter arrays, validating shapes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        hidden_w: Vec<f64>,
        hidden_b: Vec<f64>,
        head_w: Vec<f64>,
        head_b: Vec<f64>,
        rng_seed: u64,
    ) -> Result<Self> {
        let hidden_dim = if kind == ModelKind::LinearSoftmax {
            0
        } else {
            hidden_dim
        };
        let embed_dim = if hidden_dim == 0 { input_dim } else { hidden_dim };
        if hidden_w.len() != hidden_dim * input_dim
            || hidden_b.len() != hidden_dim
            || head_w.len() != num_classes * embed_dim
            || head_b.len() != num_classes
        {
            return Err(Error::Validation("parameter array shape mismatch".into()));
        }
        Ok(LearnerModel {
            kind,
            input_dim,
            hidden_dim,
            num_classes,
            hidden_w,
            hidden_b,
            head_w,
            head_b,
            rng_seed,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embed_dim(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden_w
            .iter()
            .chain(&self.hidden_b)
            .chain(&self.head_w)
            .chain(&self.head_b)
            .all(|v| v.is_finite())
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim {
            return Err(Error::Validation(format!(
                "input has dimension {}, model expects {}",
                features.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden_pre(&self, features: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        (0..self.hidden_dim)
            .map(|u| {
                let mut z = self.hidden_b[u];
                for (j, x) in features.iter().enumerate() {
                    z += self.hidden_w[u * d + j] * x;
                }
                z
            })
            .collect()
    }

    /// Embedding of a sample: the input itself for the linear kind, the
    /// rectified hidden activations for the MLP kind.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        match self.kind {
            ModelKind::LinearSoftmax => Ok(features.to_vec()),
            ModelKind::OneHiddenMlp => {
                Ok(self.hidden_pre(features).iter().map(|z| z.max(0.0)).collect())
            }
        }
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let e = self.embed(features)?;
        Ok(self.head_logits(&e))
    }

    fn head_logits(&self, embedding: &[f64]) -> Vec<f64> {
        let ed = self.embed_dim();
        (0..self.num_classes)
            .map(|c| {
                let mut z = self.head_b[c];
                for (j, v) in embedding.iter().enumerate() {
                    z += self.head_w[c * ed + j] * v;
                }
                z
            })
            .collect()
    }

    /// Softmax class probabilities; numerically stable for large logits.
    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    /// Adds head rows for new classes. Existing rows are preserved exactly;
    /// new rows are drawn from N(0, init_std^2) with the given seed
    /// (init_std = 0 yields zero rows).
    pub fn expand_head(&self, new_num_classes: usize, init_std: f64, seed: u64) -> Result<Self> {
        if new_num_classes <= self.num_classes {
            return Err(Error::Validation(format!(
                "cannot shrink or keep head size: {} -> {new_num_classes}",
                self.num_classes
            )));
        }
        let mut out = self.clone();
        let ed = self.embed_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in self.num_classes..new_num_classes {
            for _ in 0..ed {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.head_w.push(init_std * z);
            }
            out.head_b.push(0.0);
        }
        out.num_classes = new_num_classes;
        Ok(out)
    }

    // Flat parameter access in a fixed order, used by gradient checking.
    pub(crate) fn param_count(&self) -> usize {
        self.hidden_w.len() + self.hidden_b.len() + self.head_w.len() + self.head_b.len()
    }

    pub(crate) fn get_param(&self, i: usize) -> f64 {
        let (a, b, c) = (self.hidden_w.len(), self.hidden_b.len(), self.head_w.len());
        if i < a {
            self.hidden_w[i]
        } else if i < a + b {
            self.hidden_b[i - a]
        } else if i < a + b + c {
            self.head_w[i - a - b]
        } else {
            self.head_b[i - a - b - c]
        }
    }

    pub(crate) fn set_param(&mut self, i: usize, v: f64) {
        let (a, b, c) = (self.hidden_w.len(), self.hidden_b.len(), self.head_w.len());
        if i < a {
            self.hidden_w[i] = v;
        } else if i < a + b {
            self.hidden_b[i - a] = v;
        } else if i < a + b + c {
            self.head_w[i - a - b] = v;
        } else {
            self.head_b[i - a - b - c] = v;
        }
    }

    /// Saves a versioned checkpoint; `load_checkpoint` restores it bit-exactly.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            rng_seed: self.rng_seed,
            hidden_w: self.hidden_w.clone(),
            hidden_b: self.hidden_b.clone(),
            head_w: self.head_w.clone(),
            head_b: self.head_b.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        LearnerModel::from_parts(
            file.kind,
            file.input_dim,
            file.hidden_dim,
            file.num_classes,
            file.hidden_w,
            file.hidden_b,
            file.head_w,
            file.head_b,
            file.rng_seed,
        )
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    kind: ModelKind,
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    rng_seed: u64,
    hidden_w: Vec<f64>,
    hidden_b: Vec<f64>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Index of the maximum, lowest index on ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One labeled training example: features plus a class index below the
/// model's `num_classes`.
pub type LabeledExample = (Vec<f64>, usize);

/// SGD hyperparameters. `lr_plateau_patience` epochs without a new best
/// training loss divide the learning rate by `1/lr_decay_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_plateau_patience: 10,
            lr_decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Validation(format!("lr {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!(
                "momentum {} must be in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Validation(format!(
                "lr_decay_factor {} must be in (0, 1]",
                self.lr_decay_factor
            )));
        }
        if self.lr_plateau_patience == 0 {
            return Err(Error::Validation("lr_plateau_patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// Plateau schedule state. One schedule is shared across all fine-tuning
/// rounds of a state so the learning rate keeps decaying over the whole
/// active learning process instead of resetting per round.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    current_lr: f64,
    best_loss: f64,
    plateau_streak: usize,
}

impl LrSchedule {
    pub fn new(initial_lr: f64) -> Self {
        LrSchedule {
            current_lr: initial_lr,
            best_loss: f64::INFINITY,
            plateau_streak: 0,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.current_lr
    }

    fn observe(&mut self, loss: f64, patience: usize, factor: f64) {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.plateau_streak = 0;
        } else {
            self.plateau_streak += 1;
            if self.plateau_streak >= patience {
                self.current_lr *= factor;
                self.plateau_streak = 0;
            }
        }
    }
}

struct ParamSet {
    hidden_w: Vec<f64>,
    hidden_b: Vec<f64>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

impl ParamSet {
    fn zeros_like(model: &LearnerModel) -> Self {
        ParamSet {
            hidden_w: vec![0.0; model.hidden_w.len()],
            hidden_b: vec![0.0; model.hidden_b.len()],
            head_w: vec![0.0; model.head_w.len()],
            head_b: vec![0.0; model.head_b.len()],
        }
    }

    fn flat(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.hidden_w.len() + self.hidden_b.len() + self.head_w.len() + self.head_b.len());
        out.extend(&self.hidden_w);
        out.extend(&self.hidden_b);
        out.extend(&self.head_w);
        out.extend(&self.head_b);
        out
    }
}

fn check_data(model: &LearnerModel, data: &[LabeledExample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Validation("training data is empty".into()));
    }
    for (x, y) in data {
        if x.len() != model.input_dim {
            return Err(Error::Validation(format!(
                "example dimension {} does not match input_dim {}",
                x.len(),
                model.input_dim
            )));
        }
        if *y >= model.num_classes {
            return Err(Error::Validation(format!(
                "label {y} out of range for {} classes",
                model.num_classes
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over a labeled set.
pub fn mean_loss(model: &LearnerModel, data: &[LabeledExample]) -> Result<f64> {
    check_data(model, data)?;
    let mut total = 0.0;
    for (x, y) in data {
        let z = model.logits(x)?;
        total += log_sum_exp(&z) - z[*y];
    }
    Ok(total / data.len() as f64)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy and its gradient w.r.t. every parameter. Weight decay
/// is an optimizer-side term and is not part of this loss.
fn loss_and_grads(model: &LearnerModel, data: &[LabeledExample]) -> Result<(f64, ParamSet)> {
    let mut grads = ParamSet::zeros_like(model);
    let n = data.len() as f64;
    let d = model.input_dim;
    let ed = model.embed_dim();
    let mut total_loss = 0.0;

    for (x, y) in data {
        let (embedding, hidden_pre) = match model.kind {
            ModelKind::LinearSoftmax => (x.clone(), Vec::new()),
            ModelKind::OneHiddenMlp => {
                let pre = model.hidden_pre(x);
                (pre.iter().map(|z| z.max(0.0)).collect(), pre)
            }
        };
        let z = model.head_logits(&embedding);
        total_loss += log_sum_exp(&z) - z[*y];
        let p = softmax(&z);

        // dL/dz = (p - onehot) / n
        let mut dz = p;
        dz[*y] -= 1.0;
        for v in dz.iter_mut() {
            *v /= n;
        }

        for (c, dzc) in dz.iter().enumerate() {
            grads.head_b[c] += dzc;
            for (j, e) in embedding.iter().enumerate() {
                grads.head_w[c * ed + j] += dzc * e;
            }
        }

        if model.kind == ModelKind::OneHiddenMlp {
            for (u, pre) in hidden_pre.iter().enumerate() {
                if *pre <= 0.0 {
                    continue;
                }
                let mut dh = 0.0;
                for (c, dzc) in dz.iter().enumerate() {
                    dh += model.head_w[c * ed + u] * dzc;
                }
                grads.hidden_b[u] += dh;
                for (j, xv) in x.iter().enumerate() {
                    grads.hidden_w[u * d + j] += dh * xv;
                }
            }
        }
    }
    Ok((total_loss / n, grads))
}

fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, wd: f64) {
    for i in 0..params.len() {
        let g = grads[i] + wd * params[i];
        velocity[i] = momentum * velocity[i] + g;
        params[i] -= lr * velocity[i];
    }
}

/// Trains with a fresh learning-rate schedule. See [`train_with_schedule`].
pub fn train(model: &LearnerModel, data: &[LabeledExample], cfg: &TrainConfig) -> Result<LearnerModel> {
    let mut schedule = LrSchedule::new(cfg.lr);
    train_with_schedule(model, data, cfg, &mut schedule)
}

/// Mini-batch SGD with momentum and weight decay. Shuffling and summation
/// order are fixed by `cfg.seed`, so identical inputs give bit-identical
/// parameters. Returns the parameters with the lowest full-set training loss
/// observed (the initial parameters count), so the returned training loss
/// never exceeds its starting value.
pub fn train_with_schedule(
    model: &LearnerModel,
    data: &[LabeledExample],
    cfg: &TrainConfig,
    schedule: &mut LrSchedule,
) -> Result<LearnerModel> {
    cfg.validate()?;
    check_data(model, data)?;

    let mut work = model.clone();
    let mut velocity = ParamSet::zeros_like(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial_loss = mean_loss(&work, data)?;
    if !initial_loss.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            message: format!("initial loss is {initial_loss}"),
        });
    }
    let mut best = (initial_loss, work.clone());

    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle_indices(&mut indices, &mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let batch_data: Vec<LabeledExample> = batch.iter().map(|&i| data[i].clone()).collect();
            let (_, grads) = loss_and_grads(&work, &batch_data)?;
            let lr = schedule.current_lr();
            sgd_update(&mut work.hidden_w, &grads.hidden_w, &mut velocity.hidden_w, lr, cfg.momentum, cfg.weight_decay);
            sgd_update(&mut work.hidden_b, &grads.hidden_b, &mut velocity.hidden_b, lr, cfg.momentum, cfg.weight_decay);
            sgd_update(&mut work.head_w, &grads.head_w, &mut velocity.head_w, lr, cfg.momentum, cfg.weight_decay);
            sgd_update(&mut work.head_b, &grads.head_b, &mut velocity.head_b, lr, cfg.momentum, cfg.weight_decay);
        }
        let epoch_loss = mean_loss(&work, data)?;
        if !epoch_loss.is_finite() || !work.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("loss became {epoch_loss}"),
            });
        }
        schedule.observe(epoch_loss, cfg.lr_plateau_patience, cfg.lr_decay_factor);
        if epoch_loss < best.0 {
            best = (epoch_loss, work.clone());
        }
    }
    Ok(best.1)
}

fn shuffle_indices(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    indices.shuffle(rng);
}

/// Per-class training counts used by threshold-calibrated inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPriorTable {
    counts: Vec<usize>,
}

impl ClassPriorTable {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Validation("prior table is empty".into()));
        }
        if let Some(idx) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!(
                "class {idx} has zero training examples in the prior table"
            )));
        }
        Ok(ClassPriorTable { counts })
    }

    pub fn uniform(num_classes: usize, count: usize) -> Result<Self> {
        ClassPriorTable::new(vec![count; num_classes])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, class: usize) -> usize {
        self.counts[class]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Threshold-moving inference: each probability is multiplied by
/// total/count_j before the argmax, boosting classes with few training
/// samples. Ties go to the lowest class id.
pub fn calibrated_predict(
    model: &LearnerModel,
    priors: &ClassPriorTable,
    features: &[f64],
) -> Result<(Vec<f64>, usize)> {
    if priors.len() != model.num_classes() {
        return Err(Error::Validation(format!(
            "prior table covers {} classes, model has {}",
            priors.len(),
            model.num_classes()
        )));
    }
    let p = model.predict_proba(features)?;
    let total = priors.total() as f64;
    let scores: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(j, pj)| pj * total / priors.count(j) as f64)
        .collect();
    let predicted = argmax_lowest(&scores);
    Ok((scores, predicted))
}

/// Compares analytic gradients of the mean cross-entropy against central
/// differences, returning the maximum relative error over all parameters.
pub fn gradient_check(model: &LearnerModel, data: &[LabeledExample], epsilon: f64) -> Result<f64> {
    if data.len() > 32 {
        return Err(Error::Validation(
            "gradient_check is limited to 32 examples".into(),
        ));
    }
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Validation(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    check_data(model, data)?;

    let (_, grads) = loss_and_grads(model, data)?;
    let analytic = grads.flat();
    debug_assert_eq!(analytic.len(), model.param_count());
    let mut max_rel = 0.0_f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        plus.set_param(i, model.get_param(i) + epsilon);
        let mut minus = model.clone();
        minus.set_param(i, model.get_param(i) - epsilon);
        let numeric = (mean_loss(&plus, data)? - mean_loss(&minus, data)?) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
