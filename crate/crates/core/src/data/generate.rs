//! Synthetic imbalanced class-incremental streams from Gaussian mixtures.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{state_group_sizes, ClassIncrementalStream, Sample, StateData};
use crate::error::{Error, Result};
use crate::metrics;

/// Declarative description of a synthetic dataset: one isotropic Gaussian
/// blob per class with a seed-deterministic center.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: Vec<usize>,
    pub class_center_scale: f64,
    pub class_spread: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Uniform per-class counts.
    pub fn uniform(num_classes: usize, dim: usize, per_class: usize, seed: u64) -> Self {
        GeneratorSpec {
            num_classes,
            dim,
            samples_per_class: vec![per_class; num_classes],
            class_center_scale: 2.0,
            class_spread: 1.0,
            test_per_class: 50,
            seed,
        }
    }

    /// Builds per-class counts hitting `target_cv` within 0.01 via
    /// [`make_imbalanced_counts`].
    pub fn with_target_cv(
        num_classes: usize,
        dim: usize,
        mean: f64,
        target_cv: f64,
        min_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        let counts = make_imbalanced_counts(num_classes, mean, target_cv, min_per_class, seed)?;
        let spec = GeneratorSpec {
            num_classes,
            dim,
            samples_per_class: counts,
            class_center_scale: 2.0,
            class_spread: 1.0,
            test_per_class: 50,
            seed,
        };
        let achieved = spec.reported_cv()?;
        if (achieved - target_cv).abs() > 0.01 {
            return Err(Error::Infeasible(format!(
                "achieved cv {achieved:.4} misses target {target_cv:.4} by more than 0.01"
            )));
        }
        Ok(spec)
    }

    /// cv of the per-class count distribution this spec will generate.
    pub fn reported_cv(&self) -> Result<f64> {
        metrics::cv_of_counts(&self.samples_per_class)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::Validation(
                "num_classes and dim must be positive".into(),
            ));
        }
        if self.samples_per_class.len() != self.num_classes {
            return Err(Error::Validation(format!(
                "samples_per_class has {} entries for {} classes",
                self.samples_per_class.len(),
                self.num_classes
            )));
        }
        if self.samples_per_class.contains(&0) {
            return Err(Error::Validation(
                "every class needs at least one sample".into(),
            ));
        }
        if !self.class_center_scale.is_finite() || !self.class_spread.is_finite() {
            return Err(Error::Validation(
                "class_center_scale and class_spread must be finite".into(),
            ));
        }
        if self.class_spread < 0.0 {
            return Err(Error::Validation("class_spread must be >= 0".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Validation("test_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-class training counts with a requested mean and coefficient of
/// variation: mean within 2%, cv within 0.01, every count >= `min_per_class`.
///
/// The continuous profile distributes the excess above the floor along an
/// exponential ramp whose steepness is bisected to hit the target cv, then
/// integer rounding is repaired by unit transfers that preserve the total.
pub fn make_imbalanced_counts(
    num_classes: usize,
    mean: f64,
    target_cv: f64,
    min_per_class: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(Error::Validation("num_classes must be >= 1".into()));
    }
    if min_per_class == 0 {
        return Err(Error::Validation("min_per_class must be >= 1".into()));
    }
    if !mean.is_finite() || mean < min_per_class as f64 {
        return Err(Error::Validation(format!(
            "mean {mean} must be finite and >= min_per_class {min_per_class}"
        )));
    }
    if !target_cv.is_finite() || target_cv < 0.0 {
        return Err(Error::Validation(format!(
            "target_cv {target_cv} must be finite and >= 0"
        )));
    }

    let n = num_classes;
    let total = (n as f64 * mean).round() as usize;
    let floor_total = n * min_per_class;
    debug_assert!(total >= floor_total);
    let mu_hat = total as f64 / n as f64;

    // Most imbalanced arrangement: one class takes all excess.
    let cv_max = if n == 1 {
        0.0
    } else {
        (mu_hat - min_per_class as f64) / mu_hat * ((n - 1) as f64).sqrt()
    };
    if target_cv > cv_max + 0.01 {
        return Err(Error::Infeasible(format!(
            "target cv {target_cv:.4} exceeds the maximum {cv_max:.4} reachable with \
             {n} classes, mean {mu_hat:.2} and floor {min_per_class}"
        )));
    }

    let mut counts = if target_cv == 0.0 || n == 1 {
        round_preserving_sum(&vec![mu_hat; n], total)
    } else {
        let lambda = bisect_ramp(n, total, min_per_class, target_cv);
        round_preserving_sum(&ramp_allocation(n, total, min_per_class, lambda), total)
    };

    repair_counts(&mut counts, min_per_class, target_cv)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    counts.shuffle(&mut rng);
    Ok(counts)
}

/// Continuous allocation: floor plus excess shared along exp(lambda * j/(n-1)).
fn ramp_allocation(n: usize, total: usize, floor: usize, lambda: f64) -> Vec<f64> {
    let excess = total as f64 - (n * floor) as f64;
    // Shift by the max exponent so large lambdas underflow instead of overflowing.
    let weights: Vec<f64> = (0..n)
        .map(|j| {
            let u = j as f64 / (n - 1) as f64;
            (lambda * (u - 1.0)).exp()
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| floor as f64 + excess * w / wsum)
        .collect()
}

fn continuous_cv(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn bisect_ramp(n: usize, total: usize, floor: usize, target_cv: f64) -> f64 {
    let cv_at = |lambda: f64| continuous_cv(&ramp_allocation(n, total, floor, lambda));
    let mut hi = 1.0;
    while cv_at(hi) < target_cv && hi < 1e6 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cv_at(mid) < target_cv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest-remainder rounding that keeps the exact total.
fn round_preserving_sum(values: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = values.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut leftover = total.saturating_sub(assigned);
    let mut by_frac: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v - v.floor()))
        .collect();
    by_frac.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in by_frac {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Unit transfers between the extremes until the integer cv is within
/// tolerance of the target. Transfers preserve the total and the floor.
fn repair_counts(counts: &mut [usize], floor: usize, target_cv: f64) -> Result<()> {
    let tol = 0.005;
    for _ in 0..100_000 {
        let cv = metrics::cv_of_counts(counts)?;
        if (cv - target_cv).abs() <= tol {
            return Ok(());
        }
        let rich = argmax_count(counts);
        if cv < target_cv {
            let Some(poor) = argmin_count_above(counts, floor, rich) else {
                break;
            };
            counts[poor] -= 1;
            counts[rich] += 1;
        } else {
            let poor = argmin_count(counts);
            if counts[rich] <= counts[poor] + 1 || counts[rich] <= floor {
                break;
            }
            counts[rich] -= 1;
            counts[poor] += 1;
        }
    }
    let cv = metrics::cv_of_counts(counts)?;
    if (cv - target_cv).abs() <= 0.01 {
        Ok(())
    } else {
        Err(Error::Infeasible(format!(
            "could not reach cv {target_cv:.4} (stuck at {cv:.4}) under the floor constraint"
        )))
    }
}

fn argmax_count(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn argmin_count(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c < counts[best] {
            best = i;
        }
    }
    best
}

/// Smallest count strictly above the floor, excluding `skip`.
fn argmin_count_above(counts: &[usize], floor: usize, skip: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if i == skip || c <= floor {
            continue;
        }
        if best.is_none_or(|b| c < counts[b]) {
            best = Some(i);
        }
    }
    best
}

/// Generates a class-incremental stream of Gaussian blobs. Identical
/// `(spec, num_states)` inputs produce a bit-identical stream.
pub fn generate_gaussian_stream(
    spec: &GeneratorSpec,
    num_states: usize,
) -> Result<ClassIncrementalStream> {
    spec.validate()?;
    if num_states == 0 {
        return Err(Error::Config("num_states must be >= 1".into()));
    }
    if spec.num_classes < num_states {
        return Err(Error::Config(format!(
            "{} classes cannot fill {} states",
            spec.num_classes, num_states
        )));
    }

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_seeds: Vec<u64> = (0..spec.num_classes).map(|_| master.next_u64()).collect();
    let assign_seed = master.next_u64();

    // Per-class blobs, ids assigned sequentially in class order.
    let mut train_by_class: Vec<Vec<Sample>> = Vec::with_capacity(spec.num_classes);
    let mut test_by_class: Vec<Vec<Sample>> = Vec::with_capacity(spec.num_classes);
    let mut next_id: u64 = 0;
    for (class, &class_seed) in class_seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed);
        let center: Vec<f64> = (0..spec.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.class_center_scale * z
            })
            .collect();
        let mut draw = |id: &mut u64| {
            let features: Vec<f64> = center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + spec.class_spread * z
                })
                .collect();
            let s = Sample::new(*id, features, class);
            *id += 1;
            s
        };
        let train = (0..spec.samples_per_class[class])
            .map(|_| draw(&mut next_id))
            .collect();
        let test = (0..spec.test_per_class)
            .map(|_| draw(&mut next_id))
            .collect();
        train_by_class.push(train);
        test_by_class.push(test);
    }

    // Seed-shuffled class order, contiguous state groups, remainder to state 0.
    let mut order: Vec<usize> = (0..spec.num_classes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(assign_seed));
    let sizes = state_group_sizes(spec.num_classes, num_states);

    let mut states = Vec::with_capacity(num_states);
    let mut cursor = 0;
    for size in sizes {
        let mut classes: Vec<usize> = order[cursor..cursor + size].to_vec();
        cursor += size;
        classes.sort_unstable();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &c in &classes {
            train.extend(train_by_class[c].iter().cloned());
            test.extend(test_by_class[c].iter().cloned());
        }
        states.push(StateData {
            classes,
            train,
            test,
        });
    }

    let stream = ClassIncrementalStream {
        dim: spec.dim,
        states,
    };
    stream.validate()?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_counts_are_uniform() {
        let counts = make_imbalanced_counts(10, 100.0, 0.0, 1, 3).unwrap();
        assert_eq!(counts, vec![100; 10]);
    }

    #[test]
    fn two_class_closed_form_solution() {
        let mut counts = make_imbalanced_counts(2, 50.0, 0.8, 1, 11).unwrap();
        counts.sort_unstable();
        assert_eq!(counts, vec![10, 90]);
    }

    #[test]
    fn reference_imbalanced_profile_is_reached() {
        // 101 classes, mean 223.74, cv 0.794, floor 25
        let counts = make_imbalanced_counts(101, 223.74, 0.794, 25, 5).unwrap();
        assert!(counts.iter().all(|&c| c >= 25));
        let cv = metrics::cv_of_counts(&counts).unwrap();
        assert!((cv - 0.794).abs() <= 0.01, "cv = {cv}");
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!((mean - 223.74).abs() / 223.74 <= 0.02, "mean = {mean}");
    }

    #[test]
    fn infeasible_cv_is_reported() {
        // With 2 classes, mean 10 and floor 9 the cv cannot exceed ~0.1.
        assert!(matches!(
            make_imbalanced_counts(2, 10.0, 2.0, 9, 1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn cv_targeting_constructor_reports_within_tolerance() {
        let spec = GeneratorSpec::with_target_cv(100, 4, 500.0, 0.7523, 25, 9).unwrap();
        let cv = spec.reported_cv().unwrap();
        assert!((cv - 0.7523).abs() <= 0.01, "cv = {cv}");
        assert!((0.74..=0.76).contains(&cv));
    }

    #[test]
    fn uniform_split_places_half_the_classes_per_state() {
        let spec = GeneratorSpec::uniform(10, 2, 50, 42);
        let stream = generate_gaussian_stream(&spec, 2).unwrap();
        assert_eq!(stream.num_states(), 2);
        assert_eq!(stream.classes_per_state(), vec![5, 5]);
        for state in &stream.states {
            assert_eq!(state.train.len(), 250);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::uniform(6, 3, 20, 7);
        let a = generate_gaussian_stream(&spec, 3).unwrap();
        let b = generate_gaussian_stream(&spec, 3).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn more_states_than_classes_is_a_config_error() {
        let spec = GeneratorSpec::uniform(2, 2, 10, 0);
        assert!(matches!(
            generate_gaussian_stream(&spec, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_spec_values_are_rejected() {
        let mut spec = GeneratorSpec::uniform(4, 2, 10, 0);
        spec.class_spread = f64::NAN;
        assert!(matches!(
            generate_gaussian_stream(&spec, 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn remainder_classes_go_to_the_first_state() {
        let spec = GeneratorSpec::uniform(11, 2, 5, 1);
        let stream = generate_gaussian_stream(&spec, 2).unwrap();
        assert_eq!(stream.classes_per_state(), vec![6, 5]);
    }
}
