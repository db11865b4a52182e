//! Per-subject quantile normalization and training-time augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LabeledEpoch;
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("signal is degenerate: 5th and 95th percentiles are both {0}")]
    DegenerateSignal(f64),
    #[error("signal contains non-finite values")]
    NonFinite,
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

/// 5th and 95th percentile of one subject's whole-night signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub s05: f64,
    pub s95: f64,
}

/// Empirical quantile with linear interpolation between closest ranks:
/// position `h = (n - 1) q` between the sorted values at `floor(h)` and `ceil(h)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_stats<S: Scalar>(samples: &[S]) -> Result<NormalizationStats, PreprocessError> {
    if samples.is_empty() {
        return Err(PreprocessError::EmptySignal);
    }
    let mut sorted: Vec<f64> = samples.iter().map(|v| v.to_f64_lossy()).collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFinite);
    }
    sorted.sort_unstable_by(f64::total_cmp);
    let stats = NormalizationStats {
        s05: quantile_sorted(&sorted, 0.05),
        s95: quantile_sorted(&sorted, 0.95),
    };
    if stats.s05 == stats.s95 {
        return Err(PreprocessError::DegenerateSignal(stats.s05));
    }
    Ok(stats)
}

/// `2 (x - s05) / (s95 - s05) - 1`. Values outside the quantile band land
/// outside `[-1, 1]` and are left there.
pub fn normalize<S: Scalar>(x: &[S], stats: &NormalizationStats) -> Result<Vec<S>, PreprocessError> {
    let span = stats.s95 - stats.s05;
    if span == 0.0 || !span.is_finite() {
        return Err(PreprocessError::DegenerateSignal(stats.s05));
    }
    let scale = S::from_f64_lossy(2.0 / span);
    let lo = S::from_f64_lossy(stats.s05);
    Ok(x.iter().map(|&v| (v - lo) * scale - S::one()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    /// Noise standard deviation as a fraction of the epoch's standard deviation.
    pub noise_fraction: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_probability: 0.5, noise_fraction: 0.01, rng_seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(PreprocessError::InvalidConfig(format!(
                "flip_probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        if !(self.noise_fraction >= 0.0) || !self.noise_fraction.is_finite() {
            return Err(PreprocessError::InvalidConfig(format!(
                "noise_fraction {} must be >= 0",
                self.noise_fraction
            )));
        }
        Ok(())
    }

    /// RNG stream for one epoch in one training pass. Depends only on the
    /// seed, the pass and the epoch's dataset position, so batches can be
    /// assembled in any order without changing results.
    pub fn epoch_rng(&self, pass: usize, epoch_key: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(((pass as u64) << 40) ^ epoch_key as u64);
        rng
    }
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(x: &[f32]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let ss: f64 = x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Random time reversal followed by additive Gaussian noise scaled to the
/// epoch's standard deviation. The label is never touched.
pub fn augment<R: Rng + ?Sized>(epoch: &LabeledEpoch, cfg: &AugmentConfig, rng: &mut R) -> LabeledEpoch {
    let mut out = epoch.clone();
    if rng.random_bool(cfg.flip_probability) {
        out.samples.reverse();
    }
    let sigma = cfg.noise_fraction * sample_std(&out.samples);
    if sigma > 0.0 {
        for v in &mut out.samples {
            let z: f64 = rng.sample(StandardNormal);
            *v = (f64::from(*v) + sigma * z) as f32;
        }
    }
    out
}
