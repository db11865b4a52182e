use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::tensor::{Tensor, TensorError};
use crate::{Scalar, StageLabel, NUM_STAGES};

/// Per-class loss weights, indexed by class code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weight: [f64; NUM_STAGES],
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self { weight: [1.0; NUM_STAGES] }
    }

    pub fn get(&self, stage: StageLabel) -> f64 {
        self.weight[stage.index()]
    }
}

/// `min(5, max(1, ln(1 / p)))` per class.
pub fn class_weights(proportions: &[f64; NUM_STAGES]) -> Result<ClassWeights> {
    let mut weight = [0.0; NUM_STAGES];
    for (w, (&p, stage)) in weight.iter_mut().zip(proportions.iter().zip(StageLabel::ALL)) {
        if !(p > 0.0) || !p.is_finite() {
            return Err(TrainError::ZeroProportion(stage));
        }
        *w = (1.0 / p).ln().clamp(1.0, 5.0);
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 0.01 {
        log::warn!("class proportions sum to {total}, not 1");
    }
    Ok(ClassWeights { weight })
}

/// Fraction of each class among `labels`, indexed by class code.
pub fn class_proportions(labels: impl IntoIterator<Item = StageLabel>) -> [f64; NUM_STAGES] {
    let mut counts = [0usize; NUM_STAGES];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n: usize = counts.iter().sum();
    counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
}

/// Weighted cross-entropy over a batch of logits `[B, classes]`:
/// each sample contributes `w[y] * (logsumexp(x) - x[y])`, and the sum is
/// divided by the sum of the samples' weights.
pub fn weighted_ce_loss<S: Scalar>(logits: &Tensor<S>, labels: &[StageLabel], weights: &ClassWeights) -> Result<Tensor<S>> {
    let (b, c) = match *logits.shape() {
        [b, c] if b == labels.len() && b > 0 && c == NUM_STAGES => (b, c),
        ref s => {
            return Err(TensorError::ShapeMismatch(format!("loss over logits {s:?} with {} labels", labels.len())).into())
        }
    };
    let x = logits.data();
    let w: Vec<S> = labels.iter().map(|&l| S::from_f64_lossy(weights.get(l))).collect();
    let w_total: S = w.iter().copied().sum();
    let mut softmax = vec![S::zero(); b * c];
    let mut total = S::zero();
    for i in 0..b {
        let row = &x[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for (j, &z) in row.iter().enumerate() {
            let e = (z - max).exp();
            softmax[i * c + j] = e;
            denom += e;
        }
        for v in &mut softmax[i * c..(i + 1) * c] {
            *v /= denom;
        }
        let lse = max + denom.ln();
        total += w[i] * (lse - row[labels[i].index()]);
    }
    let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    Ok(Tensor::from_op(vec![], vec![total / w_total], vec![logits.clone()], move |g| {
        let scale = g[0] / w_total;
        let mut gx = softmax.clone();
        for i in 0..b {
            for j in 0..c {
                gx[i * c + j] *= w[i] * scale;
            }
            gx[i * c + targets[i]] -= w[i] * scale;
        }
        vec![Some(gx)]
    }))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use StageLabel::*;

    /// Direct transcription: per-sample `w * (-x[y] + ln(sum exp x))`, summed,
    /// divided by the summed weights.
    fn loop_oracle(logits: &[Vec<f64>], labels: &[StageLabel], w: &ClassWeights) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (row, &l) in logits.iter().zip(labels) {
            let sum_exp: f64 = row.iter().map(|v| v.exp()).sum();
            num += w.get(l) * (-row[l.index()] + sum_exp.ln());
            den += w.get(l);
        }
        num / den
    }

    fn sleep_edf_proportions() -> [f64; 5] {
        // Class code order N3, N2, N1, R, W.
        [0.085, 0.238, 0.040, 0.106, 0.528]
    }

    #[test]
    fn weights_from_dataset_proportions() {
        let w = class_weights(&sleep_edf_proportions()).unwrap();
        let expect = [(W, 1.0), (N1, 3.2189), (N2, 1.4355), (N3, 2.4651), (R, 2.2443)];
        for (s, v) in expect {
            assert!((w.get(s) - v).abs() < 1e-4, "{s}: {}", w.get(s));
        }
        let tiny = class_weights(&[0.006, 0.2, 0.2, 0.2, 0.394]).unwrap();
        assert_eq!(tiny.get(N3), 5.0);
        assert!(matches!(class_weights(&[0.0, 0.25, 0.25, 0.25, 0.25]), Err(TrainError::ZeroProportion(N3))));
    }

    #[test]
    fn proportions_count_labels() {
        let p = class_proportions([W, W, N1, W]);
        assert_eq!(p, [0.0, 0.0, 0.25, 0.0, 0.75]);
    }

    #[test]
    fn closed_forms() {
        let uniform = Tensor::<f64>::new(vec![1, 5], vec![0.0; 5]).unwrap();
        let l = weighted_ce_loss(&uniform, &[R], &ClassWeights::uniform()).unwrap();
        assert!((l.item() - 5f64.ln()).abs() < 1e-15);

        let sharp = Tensor::<f64>::new(vec![1, 5], vec![10.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut w = ClassWeights::uniform();
        w.weight[0] = 2.0;
        let l = weighted_ce_loss(&sharp, &[N3], &w).unwrap();
        // 2 ln(1 + 4 e^-10) / 2.
        let expect = (1.0 + 4.0 * (-10f64).exp()).ln();
        assert!((l.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = class_weights(&sleep_edf_proportions()).unwrap();
        for b in [1usize, 2, 7, 16] {
            let rows: Vec<Vec<f64>> = (0..b).map(|_| (0..5).map(|_| rng.random_range(-6.0..6.0)).collect()).collect();
            let labels: Vec<StageLabel> = (0..b).map(|_| StageLabel::ALL[rng.random_range(0..5)]).collect();
            let t = Tensor::new(vec![b, 5], rows.concat()).unwrap();
            let got = weighted_ce_loss(&t, &labels, &w).unwrap().item();
            assert!((got - loop_oracle(&rows, &labels, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_sample_weighted_mean() {
        let rows = vec![vec![1.0, 0.0, 0.5, -1.0, 2.0], vec![0.0, 3.0, 0.0, 0.0, 1.0]];
        let mut w = ClassWeights::uniform();
        w.weight[W.index()] = 1.0;
        w.weight[N2.index()] = 5.0;
        let labels = [W, N2];
        let t = Tensor::new(vec![2, 5], rows.concat()).unwrap();
        let l1 = loop_oracle(&rows[..1], &labels[..1], &ClassWeights::uniform());
        let l2 = loop_oracle(&rows[1..], &labels[1..], &ClassWeights::uniform());
        let got = weighted_ce_loss(&t, &labels, &w).unwrap().item();
        assert!((got - (l1 + 5.0 * l2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = class_weights(&sleep_edf_proportions()).unwrap();
        let data: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels = [W, N1, N3, R];
        let x = Tensor::variable(vec![4, 5], data.clone()).unwrap();
        weighted_ce_loss(&x, &labels, &w).unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        let h = 1e-4;
        for i in 0..20 {
            let f = |d: f64| {
                let mut v = data.clone();
                v[i] += d;
                weighted_ce_loss(&Tensor::new(vec![4, 5], v).unwrap(), &labels, &w).unwrap().item()
            };
            let numeric = (f(h) - f(-h)) / (2.0 * h);
            assert!((g[i] - numeric).abs() / numeric.abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn shape_errors() {
        let t = Tensor::<f64>::new(vec![2, 5], vec![0.0; 10]).unwrap();
        assert!(weighted_ce_loss(&t, &[W], &ClassWeights::uniform()).is_err());
        let t = Tensor::<f64>::new(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(weighted_ce_loss(&t, &[W], &ClassWeights::uniform()).is_err());
    }

    proptest! {
        #[test]
        fn weights_always_clamped(raw in prop::array::uniform5(1e-9f64..1.0)) {
            let total: f64 = raw.iter().sum();
            let p = raw.map(|v| v / total);
            let w = class_weights(&p).unwrap();
            prop_assert!(w.weight.iter().all(|&v| (1.0..=5.0).contains(&v)));
        }

        #[test]
        fn unit_weights_give_mean_cross_entropy(
            rows in prop::collection::vec(prop::array::uniform5(-20.0f64..20.0), 1..10),
            seed in any::<u64>(),
            c in 0.5f64..4.0,
        ) {
            let labels: Vec<StageLabel> = (0..rows.len()).map(|i| StageLabel::ALL[(seed as usize + i * 7) % 5]).collect();
            let t = Tensor::new(vec![rows.len(), 5], rows.concat()).unwrap();
            let plain = weighted_ce_loss(&t, &labels, &ClassWeights::uniform()).unwrap().item();
            let scaled = weighted_ce_loss(&t, &labels, &ClassWeights { weight: [c; 5] }).unwrap().item();
            let mean: f64 = rows
                .iter()
                .zip(&labels)
                .map(|(r, l)| {
                    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - r[l.index()]
                })
                .sum::<f64>()
                / rows.len() as f64;
            prop_assert!((plain - mean).abs() < 1e-9);
            prop_assert!((scaled - plain).abs() < 1e-9);
            prop_assert!(plain >= 0.0);
        }
    }
}
