use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::{StageLabel, NUM_STAGES};

/// One-vs-rest ROC and precision-recall curves for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub stage: StageLabel,
    /// `(false positive rate, true positive rate)`, from (0, 0) to (1, 1).
    pub roc: Vec<(f64, f64)>,
    /// `(recall, precision)`, starting at (0, 1).
    pub pr: Vec<(f64, f64)>,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Sweeps the threshold over every distinct score, high to low, predicting
/// positive when `score >= threshold`. Areas by the trapezoidal rule.
pub fn roc_pr_curve(stage: StageLabel, scores: &[f64], positive: &[bool]) -> Result<ClassCurve> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch { expected: scores.len(), found: positive.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::InvalidProbabilities);
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClassPresent(stage));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut roc = vec![(0.0, 0.0)];
    let mut pr = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] { tp += 1 } else { fp += 1 }
            i += 1;
        }
        roc.push((fp as f64 / n as f64, tp as f64 / p as f64));
        pr.push((tp as f64 / p as f64, tp as f64 / (tp + fp) as f64));
    }
    let roc_auc = trapezoid(&roc);
    let pr_auc = trapezoid(&pr);
    Ok(ClassCurve { stage, roc, pr, roc_auc, pr_auc })
}

/// Curves for every stage from per-epoch class probabilities (indexed by
/// class code). Stages without positives or without negatives get `None`.
pub fn roc_pr_curves(probs: &[[f64; NUM_STAGES]], labels: &[StageLabel]) -> Result<Vec<Option<ClassCurve>>> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch { expected: probs.len(), found: labels.len() });
    }
    if probs.iter().any(|row| (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(EvalError::InvalidProbabilities);
    }
    StageLabel::ALL
        .iter()
        .map(|&stage| {
            let scores: Vec<f64> = probs.iter().map(|row| row[stage.index()]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == stage).collect();
            match roc_pr_curve(stage, &scores, &positive) {
                Ok(c) => Ok(Some(c)),
                Err(EvalError::SingleClassPresent(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}
