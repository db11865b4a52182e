use chrono::NaiveDateTime;

use super::edf::{calibrate, EdfFile};
use super::hypnogram::{map_labels, StageInterval};
use super::{IngestError, Result};
use crate::StageLabel;

/// Length of one scoring window in seconds.
pub const EPOCH_SECONDS: f64 = 30.0;

/// One calibrated channel of a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub channel_name: String,
    pub sample_rate: f64,
    /// Physical units (µV for EEG).
    pub samples: Vec<f64>,
    pub start: NaiveDateTime,
}

impl EegRecording {
    /// Selects and calibrates `channel` from a decoded file.
    pub fn from_edf(file: &EdfFile, channel: &str, subject_id: impl Into<String>) -> Result<Self> {
        let (sig, digital) = file.signal(channel)?;
        let duration = file.header.record_duration;
        if duration <= 0.0 {
            return Err(IngestError::MalformedHeader(format!("record duration {duration}")));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            channel_name: channel.to_string(),
            sample_rate: sig.samples_per_record as f64 / duration,
            samples: calibrate(digital, sig)?,
            start: file.header.start,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Samples per 30-second window, if that is a whole number.
    pub fn epoch_len(&self) -> Result<usize> {
        let n = self.sample_rate * EPOCH_SECONDS;
        if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
            return Err(IngestError::SampleRateMismatch(self.sample_rate));
        }
        Ok(n.round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEpoch {
    pub samples: Vec<f32>,
    pub label: StageLabel,
    pub subject_id: String,
    /// Window position in the recording (onset / 30 s).
    pub epoch_index: usize,
}

/// Cuts a recording into labeled 30-second epochs.
///
/// Only windows entirely inside both the recording and a scored interval are
/// kept; movement and unscored windows and partial trailing windows are dropped.
pub fn epoch_recording(rec: &EegRecording, stages: &[StageInterval]) -> Result<Vec<LabeledEpoch>> {
    let len = rec.epoch_len()?;
    let mut out = Vec::new();
    for iv in stages {
        let Some(label) = map_labels(&iv.raw)? else { continue };
        let count = (iv.duration / EPOCH_SECONDS + 1e-9).floor() as usize;
        let first = (iv.onset * rec.sample_rate).round().max(0.0) as usize;
        for j in 0..count {
            let start = first + j * len;
            let Some(window) = rec.samples.get(start..start + len) else { break };
            if let Some(bad) = window.iter().position(|v| !v.is_finite()) {
                log::error!("{}: sample {} is not finite", rec.subject_id, start + bad);
                return Err(IngestError::NonFiniteSample(rec.subject_id.clone()));
            }
            out.push(LabeledEpoch {
                samples: window.iter().map(|&v| v as f32).collect(),
                label,
                subject_id: rec.subject_id.clone(),
                epoch_index: start / len,
            });
        }
    }
    Ok(out)
}
