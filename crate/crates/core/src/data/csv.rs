//! Dataset CSV ingestion and export.
//!
//! The format is `id,label,f0,...,f{d-1}` with one row per sample; ids and
//! labels are non-negative integers, features decimal floats. The same
//! format is read back and emitted when exporting synthetic streams.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{state_group_sizes, ClassIncrementalStream, Sample, StateData};
use crate::error::{Error, Result};

/// Writes samples in the dataset CSV format.
pub fn write_dataset_csv(path: &Path, dim: usize, samples: &[&Sample]) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,label");
    for i in 0..dim {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for s in samples {
        if s.dim() != dim {
            return Err(Error::Validation(format!(
                "sample {} has dimension {}, expected {dim}",
                s.id,
                s.dim()
            )));
        }
        out.push_str(&format!("{},{}", s.id, s.true_label()));
        for v in &s.features {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a dataset CSV, returning the feature dimension and the samples.
pub fn read_dataset_csv(path: &Path) -> Result<(usize, Vec<Sample>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header id,label,f0,... got '{header}'"),
        });
    }
    let dim = cols.len() - 2;
    for (i, col) in cols[2..].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("unknown header column '{col}', expected f{i}"),
            });
        }
    }

    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", dim + 2, fields.len()),
            });
        }
        let id: u64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid id '{}'", fields[0]),
        })?;
        if !seen.insert(id) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate id {id}"),
            });
        }
        let label: usize = fields[1].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid label '{}'", fields[1]),
        })?;
        let mut features = Vec::with_capacity(dim);
        for f in &fields[2..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid feature value '{f}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite feature value '{f}'"),
                });
            }
            features.push(v);
        }
        samples.push(Sample::new(id, features, label));
    }
    Ok((dim, samples))
}

/// Loads a dataset CSV and splits its classes into `num_states` contiguous
/// seed-shuffled groups. Test data comes from a stratified 80/20 split.
pub fn load_feature_dataset(
    path: &Path,
    num_states: usize,
    seed: u64,
) -> Result<ClassIncrementalStream> {
    let (dim, samples) = read_dataset_csv(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = group_by_class(samples);

    // Stratified split: per class, shuffle then hold out 20% for test.
    let mut test_by_class: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for (class, class_samples) in by_class.iter_mut() {
        let split_seed = rng.next_u64();
        class_samples.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        let n_test = class_samples.len() / 5;
        let test: Vec<Sample> = class_samples.split_off(class_samples.len() - n_test);
        test_by_class.insert(*class, test);
    }
    assemble_states(dim, by_class, test_by_class, num_states, rng.next_u64())
}

/// Like [`load_feature_dataset`] but with a companion test file instead of a
/// held-out split. Test classes must be a subset of the train classes and ids
/// must be unique across both files.
pub fn load_feature_dataset_with_test(
    train_path: &Path,
    test_path: &Path,
    num_states: usize,
    seed: u64,
) -> Result<ClassIncrementalStream> {
    let (dim, train) = read_dataset_csv(train_path)?;
    let (test_dim, test) = read_dataset_csv(test_path)?;
    if test_dim != dim {
        return Err(Error::Validation(format!(
            "test file dimension {test_dim} does not match train dimension {dim}"
        )));
    }
    let train_ids: BTreeSet<u64> = train.iter().map(|s| s.id).collect();
    if let Some(dup) = test.iter().find(|s| train_ids.contains(&s.id)) {
        return Err(Error::Validation(format!(
            "test sample id {} collides with a train id",
            dup.id
        )));
    }
    let by_class = group_by_class(train);
    let test_by_class = group_by_class(test);
    if let Some(extra) = test_by_class.keys().find(|c| !by_class.contains_key(c)) {
        return Err(Error::Validation(format!(
            "test file contains class {extra} absent from the train file"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assemble_states(dim, by_class, test_by_class, num_states, rng.next_u64())
}

fn group_by_class(samples: Vec<Sample>) -> BTreeMap<usize, Vec<Sample>> {
    let mut by_class: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.true_label()).or_default().push(s);
    }
    by_class
}

fn assemble_states(
    dim: usize,
    by_class: BTreeMap<usize, Vec<Sample>>,
    mut test_by_class: BTreeMap<usize, Vec<Sample>>,
    num_states: usize,
    assign_seed: u64,
) -> Result<ClassIncrementalStream> {
    if num_states == 0 {
        return Err(Error::Config("num_states must be >= 1".into()));
    }
    if by_class.len() < num_states {
        return Err(Error::Config(format!(
            "{} distinct classes cannot fill {} states",
            by_class.len(),
            num_states
        )));
    }
    let mut order: Vec<usize> = by_class.keys().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(assign_seed));
    let sizes = state_group_sizes(by_class.len(), num_states);

    let mut by_class = by_class;
    let mut states = Vec::with_capacity(num_states);
    let mut cursor = 0;
    for size in sizes {
        let mut classes: Vec<usize> = order[cursor..cursor + size].to_vec();
        cursor += size;
        classes.sort_unstable();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &c in &classes {
            train.extend(by_class.remove(&c).unwrap_or_default());
            test.extend(test_by_class.remove(&c).unwrap_or_default());
        }
        states.push(StateData {
            classes,
            train,
            test,
        });
    }
    let stream = ClassIncrementalStream { dim, states };
    stream.validate()?;
    Ok(stream)
}
