use super::edf::EdfFile;
use super::{IngestError, Result};
use crate::StageLabel;

/// One scored interval of a hypnogram.
#[derive(Clone, Debug, PartialEq)]
pub struct StageInterval {
    pub onset: f64,
    pub duration: f64,
    /// Stage text as it appears in the source, e.g. `"Sleep stage 2"` or `"W"`.
    pub raw: String,
}

impl StageInterval {
    pub fn new(onset: f64, duration: f64, raw: impl Into<String>) -> Self {
        Self { onset, duration, raw: raw.into() }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Where stage annotations come from.
pub enum AnnotationSource<'a> {
    /// An EDF+ file with an `EDF Annotations` signal (embedded or a separate
    /// hypnogram file), or a legacy hypnogram EDF whose single signal holds one
    /// integer stage code per scoring window.
    Edf(&'a EdfFile),
    /// Whitespace separated `onset duration stage` lines.
    Text(&'a str),
}

/// Maps a stage string to its label. `Ok(None)` marks movement time and
/// unscored windows, which are dropped.
///
/// Accepts both the bare R&K tokens (`W 1 2 3 4 R M ?`) and the EDF+
/// spelled-out forms (`Sleep stage 3`, `Movement time`).
pub fn map_labels(raw: &str) -> Result<Option<StageLabel>> {
    let s = raw.trim();
    let token = s.strip_prefix("Sleep stage ").unwrap_or(s);
    Ok(match token {
        "W" => Some(StageLabel::W),
        "R" | "REM" => Some(StageLabel::R),
        "1" => Some(StageLabel::N1),
        "2" => Some(StageLabel::N2),
        "3" | "4" => Some(StageLabel::N3),
        "M" | "Movement time" | "?" | "unscored" | "Unscored" => None,
        _ => return Err(IngestError::UnknownStageString(raw.to_string())),
    })
}

/// Reads stage intervals and checks them for unknown stages and overlaps.
pub fn parse_hypnogram(source: AnnotationSource<'_>) -> Result<Vec<StageInterval>> {
    let intervals = match source {
        AnnotationSource::Edf(file) => match file.header.signals.iter().position(|s| s.is_annotation()) {
            Some(idx) => parse_tals(&file.signal_bytes(idx))?,
            None => parse_coded_signal(file)?,
        },
        AnnotationSource::Text(text) => parse_hypnogram_text(text)?,
    };
    validate(&intervals)?;
    Ok(intervals)
}

fn validate(intervals: &[StageInterval]) -> Result<()> {
    let mut previous_end = f64::NEG_INFINITY;
    for iv in intervals {
        map_labels(&iv.raw)?;
        if !(iv.duration >= 0.0) || !iv.onset.is_finite() {
            return Err(IngestError::MalformedAnnotation(format!(
                "interval at {}s with duration {}",
                iv.onset, iv.duration
            )));
        }
        if iv.onset + 1e-6 < previous_end {
            return Err(IngestError::OverlappingAnnotations { onset: iv.onset, previous_end });
        }
        previous_end = iv.end();
    }
    Ok(())
}

/// Parses the plain text sidecar form; `#` starts a comment.
pub fn parse_hypnogram_text(text: &str) -> Result<Vec<StageInterval>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, char::is_whitespace);
        let bad = || IngestError::MalformedAnnotation(format!("line {}: {line:?}", lineno + 1));
        let onset: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let duration: f64 = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        let raw = parts.next().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(bad)?;
        out.push(StageInterval::new(onset, duration, raw));
    }
    Ok(out)
}

/// Parses EDF+ time-stamped annotation lists:
/// `+onset[\x15duration]\x14text\x14[text\x14...]\x00`.
fn parse_tals(bytes: &[u8]) -> Result<Vec<StageInterval>> {
    let mut out = Vec::new();
    for tal in bytes.split(|&b| b == 0) {
        if tal.is_empty() {
            continue;
        }
        let text = std::str::from_utf8(tal)
            .map_err(|_| IngestError::MalformedAnnotation("annotation is not UTF-8".into()))?;
        let mut parts = text.split('\x14');
        let stamp = parts.next().unwrap_or("");
        let (onset, duration) = match stamp.split_once('\x15') {
            Some((o, d)) => (o, Some(d)),
            None => (stamp, None),
        };
        if !onset.starts_with(['+', '-']) {
            return Err(IngestError::MalformedAnnotation(format!("onset {onset:?}")));
        }
        let onset: f64 = onset
            .parse()
            .map_err(|_| IngestError::MalformedAnnotation(format!("onset {onset:?}")))?;
        for label in parts.filter(|p| !p.is_empty()) {
            // Time-keeping TALs have no text and are skipped above.
            let d = duration.ok_or_else(|| {
                IngestError::MalformedAnnotation(format!("annotation {label:?} has no duration"))
            })?;
            let d: f64 = d
                .parse()
                .map_err(|_| IngestError::MalformedAnnotation(format!("duration {d:?}")))?;
            out.push(StageInterval::new(onset, d, label));
        }
    }
    Ok(out)
}

/// Legacy hypnogram EDF: one signal sampled once per scoring window with
/// codes 0=W, 1..4=S1..S4, 5=R, 6=M, 9=unscored.
fn parse_coded_signal(file: &EdfFile) -> Result<Vec<StageInterval>> {
    if file.header.signals.len() != 1 {
        return Err(IngestError::MalformedAnnotation(
            "EDF has no annotation signal and is not a single-signal hypnogram".into(),
        ));
    }
    let sig = &file.header.signals[0];
    if sig.samples_per_record == 0 {
        return Err(IngestError::MalformedAnnotation("hypnogram signal has no samples".into()));
    }
    let step = file.header.record_duration / sig.samples_per_record as f64;
    let mut out: Vec<StageInterval> = Vec::new();
    for (i, &code) in file.samples[0].iter().enumerate() {
        let raw = match code {
            0 => "W",
            1 => "1",
            2 => "2",
            3 => "3",
            4 => "4",
            5 => "R",
            6 => "M",
            9 => "?",
            other => return Err(IngestError::UnknownStageString(other.to_string())),
        };
        match out.last_mut() {
            Some(last) if last.raw == raw => last.duration += step,
            _ => out.push(StageInterval::new(i as f64 * step, step, raw)),
        }
    }
    Ok(out)
}

/// Encodes intervals as EDF+ annotation bytes, one TAL per interval after the
/// time-keeping TAL. Test and fixture helper.
pub(crate) fn encode_tals(intervals: &[StageInterval]) -> Vec<u8> {
    let mut out = b"+0\x14\x14\x00".to_vec();
    for iv in intervals {
        out.extend_from_slice(format!("+{}\x15{}\x14{}\x14\x00", iv.onset, iv.duration, iv.raw).as_bytes());
    }
    out
}
