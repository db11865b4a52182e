//! Synthetic data with known answers: sine-wave epochs whose frequency
//! identifies the class, and whole-night EDF recordings with matching
//! hypnograms.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ingest::{
    hypnogram::encode_tals, map_labels, write_edf, EdfHeader, IngestError, LabeledEpoch, SignalHeader, StageInterval,
    ANNOTATION_LABEL, DEFAULT_CHANNEL, EPOCH_SECONDS,
};
use crate::StageLabel;

/// Frequency in Hz for each class code (N3, N2, N1, R, W).
pub const SINE_FREQUENCIES: [f64; 5] = [2.0, 6.0, 10.0, 14.0, 18.0];

#[derive(Clone, Debug, PartialEq)]
pub struct SineSpec {
    pub per_class: usize,
    pub subjects: usize,
    pub length: usize,
    pub sample_rate: f64,
    /// Standard deviation of additive white noise; the sine amplitude is about 1.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SineSpec {
    fn default() -> Self {
        Self { per_class: 40, subjects: 10, length: 3000, sample_rate: 100.0, noise: 0.3, seed: 0 }
    }
}

/// `per_class` epochs for each of the five classes, classes interleaved,
/// dealt round-robin to `subjects` subject ids. Each epoch has a random
/// phase and an amplitude in [0.8, 1.2].
pub fn sine_epochs(spec: &SineSpec) -> Vec<LabeledEpoch> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let subjects = spec.subjects.max(1);
    let mut next_index = vec![0usize; subjects];
    let mut out = Vec::with_capacity(spec.per_class * 5);
    for i in 0..spec.per_class * 5 {
        let label = StageLabel::ALL[i % 5];
        let f = SINE_FREQUENCIES[label.index()];
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.8..1.2);
        let samples = (0..spec.length)
            .map(|t| {
                let z: f64 = rng.sample(StandardNormal);
                let x = amp * (std::f64::consts::TAU * f * t as f64 / spec.sample_rate + phase).sin();
                (x + spec.noise * z) as f32
            })
            .collect();
        let s = i % subjects;
        out.push(LabeledEpoch { samples, label, subject_id: format!("syn{s:03}"), epoch_index: next_index[s] });
        next_index[s] += 1;
    }
    out
}

/// A synthetic recording and its hypnogram, both as EDF bytes.
#[derive(Clone, Debug)]
pub struct SyntheticNight {
    pub recording: Vec<u8>,
    pub hypnogram: Vec<u8>,
    pub intervals: Vec<StageInterval>,
}

/// Physical range of the synthetic EEG channel in microvolts; 0.1 uV per step.
const PHYS: (f64, f64) = (-204.8, 204.7);
const DIG: (i32, i32) = (-2048, 2047);

fn eeg_header(samples_per_record: usize) -> SignalHeader {
    SignalHeader {
        label: DEFAULT_CHANNEL.into(),
        transducer: "Ag-AgCl electrodes".into(),
        physical_dimension: "uV".into(),
        physical_min: PHYS.0,
        physical_max: PHYS.1,
        digital_min: DIG.0,
        digital_max: DIG.1,
        prefiltering: "HP:0.5Hz LP:35Hz".into(),
        samples_per_record,
        reserved: String::new(),
    }
}

fn header(subject: &str, signals: Vec<SignalHeader>, records: usize, duration: f64, edf_plus: bool) -> EdfHeader {
    EdfHeader {
        version: "0".into(),
        patient_id: format!("{subject} X X X"),
        recording_id: "Startdate 01-JAN-1990 X X X".into(),
        start: NaiveDate::from_ymd_opt(1990, 1, 1).and_then(|d| d.and_hms_opt(22, 0, 0)).expect("valid date"),
        header_bytes: 256 + 256 * signals.len(),
        reserved: if edf_plus { "EDF+C".into() } else { String::new() },
        record_count: records,
        record_duration: duration,
        signals,
    }
}

/// Builds a night from `(raw stage string, epoch count)` runs at `sample_rate`
/// Hz. Scored epochs carry a sine at their class frequency (about 40 uV) plus
/// noise; unscored and movement epochs carry noise only. One data record per
/// 30-second epoch.
pub fn synthetic_night(
    subject: &str,
    runs: &[(&str, usize)],
    sample_rate: usize,
    seed: u64,
) -> Result<SyntheticNight, IngestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_epoch = sample_rate * EPOCH_SECONDS as usize;
    let mut digital = Vec::new();
    let mut intervals = Vec::new();
    let mut onset = 0.0;
    for &(raw, count) in runs {
        let freq = map_labels(raw)?.map(|s| SINE_FREQUENCIES[s.index()]);
        for _ in 0..count {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(30.0..50.0);
            for t in 0..per_epoch {
                let z: f64 = rng.sample(StandardNormal);
                let signal = freq.map_or(0.0, |f| amp * (std::f64::consts::TAU * f * t as f64 / sample_rate as f64 + phase).sin());
                let physical = signal + 8.0 * z;
                digital.push((physical / 0.1).round().clamp(DIG.0 as f64, DIG.1 as f64) as i16);
            }
        }
        let duration = count as f64 * EPOCH_SECONDS;
        intervals.push(StageInterval::new(onset, duration, format!("Sleep stage {raw}")));
        onset += duration;
    }
    let records = digital.len() / per_epoch;
    let recording = write_edf(&header(subject, vec![eeg_header(per_epoch)], records, EPOCH_SECONDS, false), &[digital])?;

    let mut tals = encode_tals(&intervals);
    if tals.len() % 2 == 1 {
        tals.push(0);
    }
    let words: Vec<i16> = tals.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    let annotation = SignalHeader {
        label: ANNOTATION_LABEL.into(),
        transducer: String::new(),
        physical_dimension: String::new(),
        physical_min: -1.0,
        physical_max: 1.0,
        digital_min: -32768,
        digital_max: 32767,
        prefiltering: String::new(),
        samples_per_record: words.len(),
        reserved: String::new(),
    };
    let hypnogram = write_edf(&header(subject, vec![annotation], 1, 0.0, true), &[words])?;
    Ok(SyntheticNight { recording, hypnogram, intervals })
}
