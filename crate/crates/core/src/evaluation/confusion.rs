use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::{StageLabel, NUM_STAGES};

/// 5x5 counts indexed `[true code][predicted code]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_STAGES]; NUM_STAGES]) -> Self {
        Self { counts }
    }

    /// Builds from the tabular layout used in reports: rows W, R, N1, N2, N3
    /// (true), columns N3, N2, N1, R, W (predicted).
    pub fn from_display(rows: [[u64; NUM_STAGES]; NUM_STAGES]) -> Self {
        let mut cm = Self::new();
        for (r, truth) in StageLabel::DISPLAY_ROWS.iter().enumerate() {
            for (c, pred) in StageLabel::ALL.iter().enumerate() {
                cm.counts[truth.index()][pred.index()] = rows[r][c];
            }
        }
        cm
    }

    /// Inverse of [`ConfusionMatrix::from_display`].
    pub fn to_display(&self) -> [[u64; NUM_STAGES]; NUM_STAGES] {
        let mut rows = [[0; NUM_STAGES]; NUM_STAGES];
        for (r, truth) in StageLabel::DISPLAY_ROWS.iter().enumerate() {
            for (c, pred) in StageLabel::ALL.iter().enumerate() {
                rows[r][c] = self.get(*truth, *pred);
            }
        }
        rows
    }

    pub fn accumulate(&mut self, truth: StageLabel, pred: StageLabel) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn get(&self, truth: StageLabel, pred: StageLabel) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn counts(&self) -> &[[u64; NUM_STAGES]; NUM_STAGES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_STAGES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, truth: StageLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn col_sum(&self, pred: StageLabel) -> u64 {
        self.counts.iter().map(|row| row[pred.index()]).sum()
    }
}

/// One-vs-rest metrics in percent. `None` where the ratio's denominator is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn stage_metrics(cm: &ConfusionMatrix, stage: StageLabel) -> Result<StageMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let tp = cm.get(stage, stage);
    let fn_ = cm.row_sum(stage) - tp;
    let fp = cm.col_sum(stage) - tp;
    let tn = total - tp - fn_ - fp;
    let recall = pct(tp, tp + fn_);
    let precision = pct(tp, tp + fp);
    let f1 = match (recall, precision) {
        (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(StageMetrics { accuracy: pct(tp + tn, total), recall, precision, f1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    /// Percent.
    pub overall_accuracy: f64,
    /// Unweighted mean of the per-stage accuracies, percent.
    pub mean_accuracy: Option<f64>,
    /// Unweighted mean of the per-stage recalls, percent.
    pub mean_recall: Option<f64>,
    /// Unweighted mean of the per-stage F1 values, as a fraction.
    pub macro_f1: Option<f64>,
    pub kappa: Option<f64>,
    /// Stages with at least one undefined metric. The means above skip them.
    pub undefined_stages: Vec<StageLabel>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Cohen's kappa with chance agreement `p_e = sum(a_i b_i) / n^2` over row
/// sums `a` and column sums `b`. `None` when `p_e == 1`.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Option<f64> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return None;
    }
    let p0 = cm.trace() as f64 / n;
    let pe: f64 = StageLabel::ALL.iter().map(|&s| cm.row_sum(s) as f64 * cm.col_sum(s) as f64).sum::<f64>() / (n * n);
    (pe != 1.0).then(|| (p0 - pe) / (1.0 - pe))
}

pub fn summary_metrics(cm: &ConfusionMatrix) -> Result<SummaryMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let stages = StageLabel::ALL
        .iter()
        .map(|&s| stage_metrics(cm, s).map(|m| (s, m)))
        .collect::<Result<Vec<_>>>()?;
    let undefined_stages = stages
        .iter()
        .filter(|(_, m)| [m.accuracy, m.recall, m.precision, m.f1].contains(&None))
        .map(|(s, _)| *s)
        .collect();
    Ok(SummaryMetrics {
        overall_accuracy: 100.0 * cm.trace() as f64 / total as f64,
        mean_accuracy: mean(stages.iter().map(|(_, m)| m.accuracy)),
        mean_recall: mean(stages.iter().map(|(_, m)| m.recall)),
        macro_f1: mean(stages.iter().map(|(_, m)| m.f1)).map(|v| v / 100.0),
        kappa: cohen_kappa(cm),
        undefined_stages,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use StageLabel::*;

    fn five_fold_matrix() -> ConfusionMatrix {
        ConfusionMatrix::from_display([
            [9, 2, 97, 58, 7792],
            [1, 111, 153, 1310, 20],
            [6, 71, 364, 123, 38],
            [185, 3198, 118, 91, 8],
            [1134, 144, 2, 2, 3],
        ])
    }

    #[test]
    fn display_layout() {
        let cm = five_fold_matrix();
        assert_eq!(cm.get(W, W), 7792);
        assert_eq!(cm.get(W, N1), 97);
        assert_eq!(cm.get(N3, N2), 144);
        assert_eq!(cm.total(), 15040);
        assert_eq!(cm.to_display()[0], [9, 2, 97, 58, 7792]);
    }

    #[test]
    fn accumulate_counts_once() {
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(W, W);
        assert_eq!((cm.get(W, W), cm.total()), (1, 1));
        cm.accumulate(N1, R);
        cm.accumulate(N1, R);
        assert_eq!((cm.get(N1, R), cm.total()), (2, 3));
    }

    #[test]
    fn wake_row_of_five_fold_matrix() {
        let m = stage_metrics(&five_fold_matrix(), W).unwrap();
        // TP 7792, FN 166, FP 69 over 15040.
        assert!((m.recall.unwrap() - 100.0 * 7792.0 / 7958.0).abs() < 1e-9);
        assert!((m.precision.unwrap() - 100.0 * 7792.0 / 7861.0).abs() < 1e-9);
        assert!((m.accuracy.unwrap() - 100.0 * (15040.0 - 235.0) / 15040.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_classifier() {
        let mut counts = [[0; 5]; 5];
        for (i, row) in counts.iter_mut().enumerate() {
            row[i] = 10 + i as u64;
        }
        let cm = ConfusionMatrix::from_counts(counts);
        for s in StageLabel::ALL {
            let m = stage_metrics(&cm, s).unwrap();
            assert_eq!([m.accuracy, m.recall, m.precision, m.f1], [Some(100.0); 4]);
        }
        let s = summary_metrics(&cm).unwrap();
        assert_eq!(s.kappa, Some(1.0));
        assert_eq!(s.macro_f1, Some(1.0));
    }

    #[test]
    fn two_class_perfect_agreement() {
        let mut cm = ConfusionMatrix::new();
        for _ in 0..50 {
            cm.accumulate(W, W);
            cm.accumulate(N2, N2);
        }
        let s = summary_metrics(&cm).unwrap();
        assert_eq!(s.kappa, Some(1.0));
        assert_eq!(s.overall_accuracy, 100.0);
        // Stages without support have undefined recall, precision and F1.
        assert_eq!(s.undefined_stages, vec![N3, N1, R]);
        assert_eq!(s.mean_recall, Some(100.0));
    }

    #[test]
    fn undefined_metrics_are_absent() {
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(W, W);
        let m = stage_metrics(&cm, N1).unwrap();
        assert_eq!(m.accuracy, Some(100.0));
        assert_eq!((m.recall, m.precision, m.f1), (None, None, None));
        // Everything on one class: p_e == 1.
        assert_eq!(cohen_kappa(&cm), None);
        assert!(matches!(stage_metrics(&ConfusionMatrix::new(), W), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn majority_baseline_on_sleep_edf_counts() {
        let counts = [(W, 8030), (N1, 604), (N2, 3621), (N3, 1299), (R, 1609)];
        let mut cm = ConfusionMatrix::new();
        for (s, n) in counts {
            for _ in 0..n {
                cm.accumulate(s, W);
            }
        }
        let s = summary_metrics(&cm).unwrap();
        // 8030 / 15163.
        assert!((s.overall_accuracy - 52.9578579437).abs() < 1e-6);
        assert_eq!(s.kappa, Some(0.0));
    }

    fn arb_matrix() -> impl Strategy<Value = [[u64; 5]; 5]> {
        prop::array::uniform5(prop::array::uniform5(0u64..200))
    }

    proptest! {
        #[test]
        fn kappa_invariant_under_relabeling(counts in arb_matrix(), perm in Just([0usize, 1, 2, 3, 4]).prop_shuffle()) {
            let cm = ConfusionMatrix::from_counts(counts);
            let mut permuted = [[0; 5]; 5];
            for i in 0..5 {
                for j in 0..5 {
                    permuted[perm[i]][perm[j]] = counts[i][j];
                }
            }
            let a = cohen_kappa(&cm);
            let b = cohen_kappa(&ConfusionMatrix::from_counts(permuted));
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn overall_accuracy_is_support_weighted_recall(counts in arb_matrix()) {
            let cm = ConfusionMatrix::from_counts(counts);
            prop_assume!(cm.total() > 0);
            let s = summary_metrics(&cm).unwrap();
            let total = cm.total() as f64;
            let weighted: f64 = StageLabel::ALL
                .iter()
                .filter_map(|&st| stage_metrics(&cm, st).unwrap().recall.map(|r| r * cm.row_sum(st) as f64 / total))
                .sum();
            prop_assert!((s.overall_accuracy - weighted).abs() < 1e-9);
        }

        #[test]
        fn metrics_stay_in_range(counts in arb_matrix()) {
            let cm = ConfusionMatrix::from_counts(counts);
            prop_assume!(cm.total() > 0);
            for st in StageLabel::ALL {
                let m = stage_metrics(&cm, st).unwrap();
                for v in [m.accuracy, m.recall, m.precision, m.f1].into_iter().flatten() {
                    prop_assert!((0.0..=100.0).contains(&v));
                }
            }
            if let Some(k) = summary_metrics(&cm).unwrap().kappa {
                prop_assert!((-1.0..=1.0).contains(&k));
            }
        }
    }
}
