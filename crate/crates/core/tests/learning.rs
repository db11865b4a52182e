//! Desk-scale learning checks: single-batch overfit, a separable synthetic
//! task, and beating the majority-class baseline.

use std::time::Instant;

use msdan::evaluation::{evaluate, holdout_split, ConfusionMatrix, summary_metrics};
use msdan::ingest::LabeledEpoch;
use msdan::model::{ModelConfig, Msdan};
use msdan::synthetic::{sine_epochs, SineSpec};
use msdan::training::{train, ClassWeights, TrainConfig, Trainer};
use msdan::StageLabel;

const LENGTH: usize = 256;

fn sine_spec(seed: u64) -> SineSpec {
    SineSpec { per_class: 40, subjects: 10, length: LENGTH, sample_rate: 100.0, noise: 0.3, seed }
}

#[test]
fn single_batch_overfits() {
    let data = sine_epochs(&SineSpec { per_class: 2, ..sine_spec(5) });
    let batch: Vec<&LabeledEpoch> = data.iter().take(8).collect();
    let model = Msdan::<f64>::new(ModelConfig::micro(8, LENGTH), 1).unwrap();
    let mut trainer = Trainer::new(model, TrainConfig::default(), ClassWeights::uniform()).unwrap();
    let start = Instant::now();
    let mut steps = 0;
    let mut loss = f64::INFINITY;
    while steps < 500 && loss >= 0.01 {
        loss = trainer.step(&batch).unwrap();
        steps += 1;
    }
    eprintln!("overfit: loss {loss:.5} after {steps} steps in {:?}", start.elapsed());
    assert!(loss < 0.01, "loss {loss} after {steps} steps");
}

#[test]
fn separable_sines_are_learned() {
    let data = sine_epochs(&sine_spec(0));
    let subjects: Vec<String> = data.iter().map(|e| e.subject_id.clone()).collect();
    let split = holdout_split(&subjects, 0.8, 0).unwrap().indices(0, &data).unwrap();
    let cfg = TrainConfig { max_training_passes: 30, ..Default::default() };
    let start = Instant::now();
    let out = train::<f64>(&data, &split, &cfg, &ModelConfig::micro(4, LENGTH), None, &mut ()).unwrap();
    let train_acc = evaluate(&out.best, &data, &split.train).unwrap().summary.overall_accuracy;
    let val_acc = evaluate(&out.best, &data, &split.validation).unwrap().summary.overall_accuracy;
    eprintln!(
        "synthetic: best pass {}, train {train_acc:.1}%, held-out {val_acc:.1}% in {:?}",
        out.best_pass,
        start.elapsed()
    );
    assert!(train_acc >= 95.0 && val_acc >= 90.0);
}

#[test]
fn majority_baseline_on_sleep_edf_proportions() {
    // Per-stage epoch counts W, N1, N2, N3, R.
    let counts = [(StageLabel::W, 8030u64), (StageLabel::N1, 604), (StageLabel::N2, 3621), (StageLabel::N3, 1299), (StageLabel::R, 1609)];
    let mut m = ConfusionMatrix::new();
    for (s, n) in counts {
        for _ in 0..n {
            m.accumulate(s, StageLabel::W);
        }
    }
    let acc = summary_metrics(&m).unwrap().overall_accuracy;
    assert!((acc - 100.0 * 8030.0 / 15163.0).abs() < 1e-9);
    assert!((acc - 52.8).abs() < 0.5);
}

/// Sine epochs whose class mix follows the Sleep-EDF stage proportions.
fn imbalanced_sines(total: usize, seed: u64) -> Vec<LabeledEpoch> {
    let fractions = [(StageLabel::W, 0.528), (StageLabel::N1, 0.040), (StageLabel::N2, 0.238), (StageLabel::N3, 0.085), (StageLabel::R, 0.106)];
    let pool = sine_epochs(&SineSpec { per_class: total, ..sine_spec(seed) });
    let mut out = Vec::new();
    for (stage, f) in fractions {
        let n = ((total as f64 * f).round() as usize).max(1);
        out.extend(pool.iter().filter(|e| e.label == stage).take(n).cloned());
    }
    out
}

#[test]
fn trained_model_beats_majority_baseline() {
    let data = imbalanced_sines(250, 3);
    let subjects: Vec<String> = data.iter().map(|e| e.subject_id.clone()).collect();
    let split = holdout_split(&subjects, 0.8, 1).unwrap().indices(0, &data).unwrap();
    let majority = split.validation.iter().filter(|&&i| data[i].label == StageLabel::W).count() as f64
        / split.validation.len() as f64
        * 100.0;
    let cfg = TrainConfig { max_training_passes: 10, ..Default::default() };
    let out = train::<f64>(&data, &split, &cfg, &ModelConfig::micro(4, LENGTH), None, &mut ()).unwrap();
    let acc = evaluate(&out.best, &data, &split.validation).unwrap().summary.overall_accuracy;
    eprintln!("imbalanced: majority {majority:.1}%, trained {acc:.1}%");
    assert!(acc > majority);
}
