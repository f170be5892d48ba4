//! Reported statistics: top-1 accuracy, average incremental accuracy,
//! coefficient of variation and balance traces over labeling events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acquisition::SelectionEvent;
use crate::data::ClassId;
use crate::error::{Error, Result};

/// How the across-run standard deviation is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide by n - 1. Used for the "±" columns of run summaries.
    #[default]
    Sample,
    /// Divide by n. Used for within-dataset dispersion such as cv.
    Population,
}


/// Mean and standard deviation of a set of run-level values.
pub fn mean_std(values: &[f64], mode: StdMode) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match mode {
        StdMode::Sample => n - 1.0,
        StdMode::Population => n,
    };
    (mean, (ss / denom).sqrt())
}

/// Coefficient of variation sigma/mu of a count distribution, with the
/// population standard deviation (divide by n).
pub fn coefficient_of_variation(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::UndefinedStatistic(
            "cv of an empty count list".into(),
        ));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::UndefinedStatistic(format!(
            "cv undefined for mean {mean}"
        )));
    }
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Convenience wrapper over integer counts.
pub fn cv_of_counts(counts: &[usize]) -> Result<f64> {
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    coefficient_of_variation(&as_f)
}

/// Mean of the per-state accuracies excluding the initial non-incremental state.
pub fn average_incremental_accuracy(per_state_acc: &[f64]) -> Result<f64> {
    if per_state_acc.len() < 2 {
        return Err(Error::Request(
            "average incremental accuracy needs at least 2 states".into(),
        ));
    }
    let inc = &per_state_acc[1..];
    Ok(inc.iter().sum::<f64>() / inc.len() as f64)
}

/// Per-class correct/total tallies for one evaluation pass.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfusionSummary {
    correct: Vec<usize>,
    total: Vec<usize>,
}

impl ConfusionSummary {
    /// Tally (truth, predicted) pairs over `num_classes` classes.
    pub fn from_pairs(pairs: &[(usize, usize)], num_classes: usize) -> Result<Self> {
        let mut s = ConfusionSummary {
            correct: vec![0; num_classes],
            total: vec![0; num_classes],
        };
        for &(truth, pred) in pairs {
            if truth >= num_classes {
                return Err(Error::Validation(format!(
                    "true label {truth} out of range for {num_classes} classes"
                )));
            }
            s.total[truth] += 1;
            if truth == pred {
                s.correct[truth] += 1;
            }
        }
        Ok(s)
    }

    pub fn num_classes(&self) -> usize {
        self.total.len()
    }

    /// Overall top-1 accuracy.
    pub fn accuracy(&self) -> f64 {
        let total: usize = self.total.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.correct.iter().sum::<usize>() as f64 / total as f64
    }

    /// Recall of one class; 0 when the class has no test samples.
    pub fn recall(&self, class: usize) -> f64 {
        if class >= self.total.len() || self.total[class] == 0 {
            return 0.0;
        }
        self.correct[class] as f64 / self.total[class] as f64
    }
}

/// Per-event cv series over the labeled counts of each state's new classes.
///
/// `new_classes_by_state` supplies the full class universe of each state so
/// that classes without any label yet still count as zeros.
pub fn balance_trace(
    events: &[SelectionEvent],
    new_classes_by_state: &BTreeMap<usize, Vec<ClassId>>,
) -> Result<Vec<f64>> {
    let mut counts: BTreeMap<usize, BTreeMap<ClassId, usize>> = BTreeMap::new();
    let mut series = Vec::with_capacity(events.len());
    for ev in events {
        let universe = new_classes_by_state.get(&ev.state).ok_or_else(|| {
            Error::Parse {
                line: series.len() + 1,
                message: format!("event references unknown state {}", ev.state),
            }
        })?;
        if !universe.contains(&ev.revealed_label) {
            return Err(Error::Parse {
                line: series.len() + 1,
                message: format!(
                    "label {} is not a new class of state {}",
                    ev.revealed_label, ev.state
                ),
            });
        }
        let state_counts = counts.entry(ev.state).or_default();
        *state_counts.entry(ev.revealed_label).or_insert(0) += 1;
        let full: Vec<f64> = universe
            .iter()
            .map(|c| *state_counts.get(c).unwrap_or(&0) as f64)
            .collect();
        series.push(coefficient_of_variation(&full)?);
    }
    Ok(series)
}
