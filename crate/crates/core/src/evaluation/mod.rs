//! Splits, confusion matrices, per-stage and summary metrics, ROC/PR curves.

mod confusion;
mod curves;
mod split;

pub use confusion::{cohen_kappa, stage_metrics, summary_metrics, ConfusionMatrix, StageMetrics, SummaryMetrics};
pub use curves::{roc_pr_curve, roc_pr_curves, ClassCurve};
pub use split::{holdout_split, holdout_train_count, kfold_split, FoldSplit, SplitIndices};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LabeledEpoch;
use crate::model::{ModelError, Msdan};
use crate::{Scalar, StageLabel, NUM_STAGES};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("nothing to evaluate")]
    EmptySplit,
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("hold-out needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("split ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("no fold {0}")]
    NoSuchFold(usize),
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("subject {0:?} is not in the split")]
    UnknownSubject(String),
    #[error("curve for {0} needs both positive and negative samples")]
    SingleClassPresent(StageLabel),
    #[error("probability rows must lie in [0, 1] and sum to 1")]
    InvalidProbabilities,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Index of the largest score, the lowest class code on ties.
pub fn argmax_stage(scores: &[f64]) -> StageLabel {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().take(NUM_STAGES) {
        if s > scores[best] {
            best = i;
        }
    }
    StageLabel::from_code(best as u8).expect("index below NUM_STAGES")
}

/// Numerically stable softmax of one logit row.
pub fn softmax_row(logits: &[f64]) -> [f64; NUM_STAGES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_STAGES];
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= total);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub epoch_index: usize,
    pub truth: StageLabel,
    pub predicted: StageLabel,
    pub probabilities: [f64; NUM_STAGES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub stages: Vec<(StageLabel, StageMetrics)>,
    pub summary: SummaryMetrics,
    /// Indexed by class code; `None` where a stage is absent or universal.
    pub curves: Vec<Option<ClassCurve>>,
    /// Predictions ordered by subject, then epoch index.
    pub predictions: Vec<Prediction>,
}

pub fn evaluate_predictions(mut predictions: Vec<Prediction>) -> Result<Evaluation> {
    if predictions.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    predictions.sort_by(|a, b| (&a.subject_id, a.epoch_index).cmp(&(&b.subject_id, b.epoch_index)));
    let mut confusion = ConfusionMatrix::new();
    for p in &predictions {
        confusion.accumulate(p.truth, p.predicted);
    }
    let stages = StageLabel::DISPLAY_ROWS
        .iter()
        .map(|&s| stage_metrics(&confusion, s).map(|m| (s, m)))
        .collect::<Result<Vec<_>>>()?;
    let summary = summary_metrics(&confusion)?;
    let probs: Vec<[f64; NUM_STAGES]> = predictions.iter().map(|p| p.probabilities).collect();
    let labels: Vec<StageLabel> = predictions.iter().map(|p| p.truth).collect();
    let curves = roc_pr_curves(&probs, &labels)?;
    Ok(Evaluation { confusion, stages, summary, curves, predictions })
}

/// Eval-mode predictions for `epochs[i]` over `indices`. No augmentation.
pub fn predict<S: Scalar>(model: &Msdan<S>, epochs: &[LabeledEpoch], indices: &[usize]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(32) {
        let inputs: Vec<&[f32]> = chunk.iter().map(|&i| epochs[i].samples.as_slice()).collect();
        let logits = model.logits(&inputs, chunk.len())?;
        for (&i, row) in chunk.iter().zip(logits) {
            let row: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
            out.push(Prediction {
                subject_id: epochs[i].subject_id.clone(),
                epoch_index: epochs[i].epoch_index,
                truth: epochs[i].label,
                predicted: argmax_stage(&row),
                probabilities: softmax_row(&row),
            });
        }
    }
    Ok(out)
}

pub fn evaluate<S: Scalar>(model: &Msdan<S>, epochs: &[LabeledEpoch], indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    evaluate_predictions(predict(model, epochs, indices)?)
}

/// Versioned metrics document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub epochs: u64,
    pub confusion_rows: Vec<StageLabel>,
    pub confusion_columns: Vec<StageLabel>,
    pub confusion: Vec<Vec<u64>>,
    pub stages: Vec<StageReport>,
    pub summary: SummaryMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageLabel,
    #[serde(flatten)]
    pub metrics: StageMetrics,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

impl MetricsReport {
    pub fn new(e: &Evaluation) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            epochs: e.confusion.total(),
            confusion_rows: StageLabel::DISPLAY_ROWS.to_vec(),
            confusion_columns: StageLabel::ALL.to_vec(),
            confusion: e.confusion.to_display().iter().map(|r| r.to_vec()).collect(),
            stages: e
                .stages
                .iter()
                .map(|&(stage, metrics)| {
                    let curve = e.curves[stage.index()].as_ref();
                    StageReport { stage, metrics, roc_auc: curve.map(|c| c.roc_auc), pr_auc: curve.map(|c| c.pr_auc) }
                })
                .collect(),
            summary: e.summary.clone(),
        }
    }

    /// Fixed-width table in the display layout.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "   -  ".to_string(), |v| format!("{v:6.2}"));
        let mut s = String::from("      N3     N2     N1      R      W |  Acc    Re     Pr     F1\n");
        for (row, st) in self.confusion.iter().zip(&self.stages) {
            s.push_str(&format!("{:<3}", st.stage.name()));
            for c in row {
                s.push_str(&format!(" {c:6}"));
            }
            let m = st.metrics;
            s.push_str(&format!(" | {} {} {} {}\n", f(m.accuracy), f(m.recall), f(m.precision), f(m.f1)));
        }
        let sm = &self.summary;
        s.push_str(&format!(
            "overall {:.2}%  kappa {}  MF1 {}  mean acc {}  mean recall {}\n",
            sm.overall_accuracy,
            sm.kappa.map_or("-".into(), |k| format!("{k:.4}")),
            sm.macro_f1.map_or("-".into(), |k| format!("{k:.4}")),
            f(sm.mean_accuracy).trim(),
            f(sm.mean_recall).trim(),
        ));
        s
    }
}
