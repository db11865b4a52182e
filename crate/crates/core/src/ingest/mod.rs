//! EDF/EDF+ ingestion: header and record decoding, calibration to physical
//! units, hypnogram annotations, and slicing into labeled 30-second epochs.

mod cache;
mod edf;
mod epochs;
pub(crate) mod hypnogram;

pub use cache::{read_epoch_cache, write_epoch_cache, CACHE_MAGIC, CACHE_VERSION};
pub use edf::{calibrate, parse_edf, write_edf, EdfFile, EdfHeader, SignalHeader, ANNOTATION_LABEL};
pub use epochs::{epoch_recording, EegRecording, LabeledEpoch, EPOCH_SECONDS};
pub use hypnogram::{map_labels, parse_hypnogram, parse_hypnogram_text, AnnotationSource, StageInterval};

use thiserror::Error;

/// Channel used when none is configured.
pub const DEFAULT_CHANNEL: &str = "EEG Fpz-Cz";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("truncated file: expected at least {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("signal {0:?} not found")]
    SignalNotFound(String),
    #[error("degenerate calibration for signal {0:?}: digital_min == digital_max")]
    DegenerateCalibration(String),
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("annotation at {onset}s starts before the previous one ends at {previous_end}s")]
    OverlappingAnnotations { onset: f64, previous_end: f64 },
    #[error("unknown stage string {0:?}")]
    UnknownStageString(String),
    #[error("sample rate {0} Hz does not give an integer number of samples per 30 s epoch")]
    SampleRateMismatch(f64),
    #[error("non-finite sample in recording {0:?}")]
    NonFiniteSample(String),
    #[error("bad epoch cache: {0}")]
    BadCache(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;
