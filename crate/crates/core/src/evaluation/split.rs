use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::ingest::LabeledEpoch;

/// Train and validation index lists into an epoch collection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// How a dataset is partitioned. Persisted next to every result so the
/// partition can be audited.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FoldSplit {
    /// Epoch-granular: `assignment[i]` is the validation fold of epoch `i`.
    KFold { k: usize, seed: u64, assignment: Vec<usize> },
    /// Subject-granular.
    Holdout { ratio: f64, seed: u64, train: Vec<String>, validation: Vec<String> },
}

/// Shuffles `0..n` and deals position `i` to fold `i mod k`, so fold sizes
/// differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 || n < k {
        return Err(EvalError::TooFewSamples { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldSplit::KFold { k, seed, assignment })
}

/// Training subject count for a hold-out split: `floor(n * ratio)`, kept
/// within `[1, n - 1]` so both sides are non-empty.
pub fn holdout_train_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio + 1e-9).floor() as usize).clamp(1, n - 1)
}

pub fn holdout_split(subjects: &[String], ratio: f64, seed: u64) -> Result<FoldSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let mut unique: Vec<String> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if unique.len() < 2 {
        return Err(EvalError::TooFewSubjects(unique.len()));
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = holdout_train_count(unique.len(), ratio);
    let validation = unique.split_off(n_train);
    Ok(FoldSplit::Holdout { ratio, seed, train: unique, validation })
}

impl FoldSplit {
    pub fn fold_count(&self) -> usize {
        match self {
            FoldSplit::KFold { k, .. } => *k,
            FoldSplit::Holdout { .. } => 1,
        }
    }

    /// Index lists for fold `fold` over `epochs`.
    pub fn indices(&self, fold: usize, epochs: &[LabeledEpoch]) -> Result<SplitIndices> {
        let mut out = SplitIndices { train: Vec::new(), validation: Vec::new() };
        match self {
            FoldSplit::KFold { k, assignment, .. } => {
                if fold >= *k {
                    return Err(EvalError::NoSuchFold(fold));
                }
                if assignment.len() != epochs.len() {
                    return Err(EvalError::LengthMismatch { expected: assignment.len(), found: epochs.len() });
                }
                for (i, &f) in assignment.iter().enumerate() {
                    if f == fold { out.validation.push(i) } else { out.train.push(i) }
                }
            }
            FoldSplit::Holdout { train, validation, .. } => {
                if fold != 0 {
                    return Err(EvalError::NoSuchFold(fold));
                }
                let train: BTreeSet<&str> = train.iter().map(String::as_str).collect();
                let validation: BTreeSet<&str> = validation.iter().map(String::as_str).collect();
                for (i, e) in epochs.iter().enumerate() {
                    let id = e.subject_id.as_str();
                    if train.contains(id) {
                        out.train.push(i);
                    } else if validation.contains(id) {
                        out.validation.push(i);
                    } else {
                        return Err(EvalError::UnknownSubject(e.subject_id.clone()));
                    }
                }
            }
        }
        Ok(out)
    }
}
