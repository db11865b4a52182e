//! Staging a single recording with a trained checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use msdan::evaluation::{argmax_stage, softmax_row};
use msdan::ingest::{epoch_recording, parse_edf, EPOCH_SECONDS};
use msdan::StageLabel;
use serde::{Deserialize, Serialize};

use crate::data::{discover, load_intervals, load_signal};
use crate::error::{CliError, CliResult, ErrorKind, Tag};
use crate::pipeline::load_model;
use crate::svg::{hypnogram_svg, Track};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagedEpoch {
    pub epoch_index: usize,
    pub onset_seconds: f64,
    pub predicted: StageLabel,
    pub probabilities: [f64; 5],
    pub truth: Option<StageLabel>,
}

#[derive(Clone, Debug)]
pub struct PredictOutput {
    pub epochs: Vec<StagedEpoch>,
    /// Percentage of epochs matching the reference hypnogram, when there is one.
    pub agreement: Option<f64>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// A hypnogram in the same directory whose name pairs with `edf`.
fn sibling_hypnogram(edf: &Path) -> Option<PathBuf> {
    let dir = edf.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    discover(dir).ok()?.into_iter().find(|r| r.psg == edf || r.psg.file_name() == edf.file_name())?.hypnogram
}

/// Stages every whole 30-second window of `edf` (or, with a reference
/// hypnogram, every scored window) and writes `<stem>.stages.csv` and
/// `<stem>.hypnogram.svg` to `out`. The channel and epoch length are checked
/// against the checkpoint before the model runs.
pub fn cmd_predict(
    checkpoint: &Path,
    edf: &Path,
    hypnogram: Option<&Path>,
    channel: Option<&str>,
    out: &Path,
) -> CliResult<PredictOutput> {
    let (model, manifest) = load_model(checkpoint)?;
    let channel = channel.unwrap_or(&manifest.channel);
    if channel != manifest.channel {
        return Err(CliError::config(format!(
            "checkpoint was trained on {:?}, not {channel:?}",
            manifest.channel
        )));
    }
    let bytes = fs::read(edf).tag(ErrorKind::Data, || format!("reading {}", edf.display()))?;
    let file = parse_edf(&bytes).tag(ErrorKind::Data, || format!("parsing {}", edf.display()))?;
    let Ok((sig, _)) = file.signal(channel) else {
        return Err(CliError::config(format!("{} has no {channel:?} signal required by the checkpoint", edf.display())));
    };
    let rate = sig.samples_per_record as f64 / file.header.record_duration;
    let samples = (rate * EPOCH_SECONDS).round() as usize;
    if samples != manifest.epoch_samples {
        return Err(CliError::config(format!(
            "{} samples at {rate} Hz per epoch; the checkpoint expects {}",
            samples, manifest.epoch_samples
        )));
    }
    drop(file);

    let stem = edf.file_stem().and_then(|s| s.to_str()).unwrap_or("recording").to_string();
    let (rec, _) = load_signal(edf, channel, &stem)?;
    let reference = match hypnogram.map(Path::to_path_buf).or_else(|| sibling_hypnogram(edf)) {
        Some(h) => Some(load_intervals(&h)?),
        None => None,
    };
    let windows: Vec<(usize, Vec<f32>, Option<StageLabel>)> = match &reference {
        Some(iv) => epoch_recording(&rec, iv)
            .tag(ErrorKind::Data, || format!("epoching {}", edf.display()))?
            .into_iter()
            .map(|e| (e.epoch_index, e.samples, Some(e.label)))
            .collect(),
        None => rec
            .samples
            .chunks_exact(samples)
            .enumerate()
            .map(|(i, w)| (i, w.iter().map(|&v| v as f32).collect(), None))
            .collect(),
    };
    if windows.is_empty() {
        return Err(CliError::data(format!("{} has no whole 30-second epoch to stage", edf.display())));
    }
    let inputs: Vec<&[f32]> = windows.iter().map(|w| w.1.as_slice()).collect();
    let logits = model.logits(&inputs, 32).tag(ErrorKind::Runtime, || "running the model".into())?;
    let staged: Vec<StagedEpoch> = windows
        .iter()
        .zip(logits)
        .map(|((i, _, truth), row)| StagedEpoch {
            epoch_index: *i,
            onset_seconds: *i as f64 * EPOCH_SECONDS,
            predicted: argmax_stage(&row),
            probabilities: softmax_row(&row),
            truth: *truth,
        })
        .collect();
    let agreement = reference.as_ref().map(|_| {
        let hits = staged.iter().filter(|e| e.truth == Some(e.predicted)).count();
        100.0 * hits as f64 / staged.len() as f64
    });

    fs::create_dir_all(out).tag(ErrorKind::Runtime, || format!("creating {}", out.display()))?;
    let mut csv = String::from("epoch_index,onset_seconds,predicted,truth,p_N3,p_N2,p_N1,p_R,p_W\n");
    for e in &staged {
        let probs: Vec<String> = e.probabilities.iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch_index,
            e.onset_seconds,
            e.predicted.name(),
            e.truth.map_or("", StageLabel::name),
            probs.join(",")
        ));
    }
    let csv_path = out.join(format!("{stem}.stages.csv"));
    fs::write(&csv_path, csv).tag(ErrorKind::Runtime, || format!("writing {}", csv_path.display()))?;

    let auto: Vec<(usize, StageLabel)> = staged.iter().map(|e| (e.epoch_index, e.predicted)).collect();
    let manual: Vec<(usize, StageLabel)> = staged.iter().filter_map(|e| e.truth.map(|t| (e.epoch_index, t))).collect();
    let mut tracks = Vec::new();
    if reference.is_some() {
        tracks.push(Track { name: "manual", color: "#1f77b4", stages: &manual });
    }
    tracks.push(Track { name: "automatic", color: "#ff7f0e", stages: &auto });
    let svg_path = out.join(format!("{stem}.hypnogram.svg"));
    fs::write(&svg_path, hypnogram_svg(&stem, &tracks)).tag(ErrorKind::Runtime, || format!("writing {}", svg_path.display()))?;
    Ok(PredictOutput { epochs: staged, agreement, csv: csv_path, svg: svg_path })
}

/// Reads a `.stages.csv` written by [`cmd_predict`] back into tracks.
pub fn read_stages_csv(text: &str) -> CliResult<(Vec<(usize, StageLabel)>, Vec<(usize, StageLabel)>)> {
    let parse_stage = |s: &str| -> CliResult<StageLabel> {
        StageLabel::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| CliError::data(format!("unknown stage {s:?}")))
    };
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("epoch_index,onset_seconds,predicted,truth") {
        return Err(CliError::data("not a stages CSV"));
    }
    let (mut auto, mut manual) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(CliError::data(format!("line {}: too few fields", n + 2)));
        }
        let i: usize = f[0].parse().map_err(|_| CliError::data(format!("line {}: bad epoch index", n + 2)))?;
        auto.push((i, parse_stage(f[2])?));
        if !f[3].is_empty() {
            manual.push((i, parse_stage(f[3])?));
        }
    }
    Ok((manual, auto))
}
