use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use super::{IngestError, Result};

/// Label of the EDF+ annotation pseudo-signal.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

/// Per-signal header entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Slope of the digital to physical map.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start: NaiveDateTime,
    pub header_bytes: usize,
    /// `EDF+C` / `EDF+D` for EDF+ files, blank for plain EDF.
    pub reserved: String,
    pub record_count: usize,
    /// Seconds per data record.
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }

    /// Bytes occupied by one data record.
    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn signal_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label == label)
    }

    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }
}

/// A decoded EDF file: header plus the digital samples of every signal,
/// de-interleaved and concatenated across records.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub samples: Vec<Vec<i16>>,
}

impl EdfFile {
    pub fn signal(&self, label: &str) -> Result<(&SignalHeader, &[i16])> {
        let idx = self
            .header
            .signal_index(label)
            .ok_or_else(|| IngestError::SignalNotFound(label.to_string()))?;
        Ok((&self.header.signals[idx], &self.samples[idx]))
    }

    /// Raw bytes of a signal, in file order. Used for EDF+ annotation signals.
    pub fn signal_bytes(&self, idx: usize) -> Vec<u8> {
        self.samples[idx].iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, width: usize) -> &'a [u8] {
        let field = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        field
    }

    fn text(&mut self, width: usize, name: &str) -> Result<String> {
        let raw = self.take(width);
        if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
            return Err(IngestError::MalformedHeader(format!("{name}: non-ASCII bytes")));
        }
        // Validated as printable ASCII above.
        Ok(String::from_utf8_lossy(raw).trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, name: &str) -> Result<T> {
        let s = self.text(width, name)?;
        s.trim()
            .parse()
            .map_err(|_| IngestError::MalformedHeader(format!("{name}: {s:?} is not a number")))
    }
}

fn parse_start(date: &str, time: &str) -> Result<NaiveDateTime> {
    let bad = || IngestError::MalformedHeader(format!("start date/time {date:?} {time:?}"));
    let split = |s: &str| -> Result<Vec<u32>> {
        let parts: Vec<_> = s.split('.').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        parts.iter().map(|p| p.trim().parse::<u32>().map_err(|_| bad())).collect()
    };
    let d = split(date)?;
    let t = split(time)?;
    // EDF two-digit years: 85..99 -> 1985..1999, 00..84 -> 2000..2084.
    let year = if d[2] >= 85 { 1900 + d[2] } else { 2000 + d[2] };
    NaiveDate::from_ymd_opt(year as i32, d[1], d[0])
        .and_then(|day| day.and_hms_opt(t[0], t[1], t[2]))
        .ok_or_else(bad)
}

/// Decodes an EDF or EDF+ byte stream.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile> {
    if bytes.len() < FIXED_HEADER {
        return Err(IngestError::TruncatedFile { expected: FIXED_HEADER, actual: bytes.len() });
    }
    let mut f = Fields { bytes, pos: 0 };
    let version = f.text(8, "version")?;
    let patient_id = f.text(80, "patient id")?;
    let recording_id = f.text(80, "recording id")?;
    let date = f.text(8, "start date")?;
    let time = f.text(8, "start time")?;
    let start = parse_start(&date, &time)?;
    let header_bytes: usize = f.number(8, "header bytes")?;
    let reserved = f.text(44, "reserved")?;
    let declared_records: i64 = f.number(8, "record count")?;
    let record_duration: f64 = f.number(8, "record duration")?;
    let signal_count: usize = f.number(4, "signal count")?;

    if signal_count == 0 {
        return Err(IngestError::MalformedHeader("signal count is zero".into()));
    }
    if header_bytes != FIXED_HEADER + SIGNAL_HEADER * signal_count {
        return Err(IngestError::MalformedHeader(format!(
            "header declares {header_bytes} bytes but {signal_count} signals need {}",
            FIXED_HEADER + SIGNAL_HEADER * signal_count
        )));
    }
    if !(record_duration >= 0.0 && record_duration.is_finite()) {
        return Err(IngestError::MalformedHeader(format!("record duration {record_duration}")));
    }
    if bytes.len() < header_bytes {
        return Err(IngestError::TruncatedFile { expected: header_bytes, actual: bytes.len() });
    }

    // Signal fields are stored column-wise: all labels, then all transducers, ...
    let ns = signal_count;
    let mut cols = |width: usize, name: &str| -> Result<Vec<String>> {
        (0..ns).map(|_| f.text(width, name)).collect()
    };
    let labels = cols(16, "label")?;
    let transducers = cols(80, "transducer")?;
    let dims = cols(8, "physical dimension")?;
    let pmins = cols(8, "physical minimum")?;
    let pmaxs = cols(8, "physical maximum")?;
    let dmins = cols(8, "digital minimum")?;
    let dmaxs = cols(8, "digital maximum")?;
    let prefilters = cols(80, "prefiltering")?;
    let spr = cols(8, "samples per record")?;
    let sig_reserved = cols(32, "signal reserved")?;

    fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
        s.trim()
            .parse()
            .map_err(|_| IngestError::MalformedHeader(format!("{name}: {s:?} is not a number")))
    }

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let sig = SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: num(&pmins[i], "physical minimum")?,
            physical_max: num(&pmaxs[i], "physical maximum")?,
            digital_min: num(&dmins[i], "digital minimum")?,
            digital_max: num(&dmaxs[i], "digital maximum")?,
            prefiltering: prefilters[i].clone(),
            samples_per_record: num(&spr[i], "samples per record")?,
            reserved: sig_reserved[i].clone(),
        };
        if sig.digital_min >= sig.digital_max {
            return Err(IngestError::MalformedHeader(format!(
                "signal {:?}: digital_min {} >= digital_max {}",
                sig.label, sig.digital_min, sig.digital_max
            )));
        }
        if sig.physical_min == sig.physical_max {
            return Err(IngestError::MalformedHeader(format!(
                "signal {:?}: physical_min == physical_max",
                sig.label
            )));
        }
        signals.push(sig);
    }

    let mut header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start,
        header_bytes,
        reserved,
        record_count: 0,
        record_duration,
        signals,
    };
    let record_bytes = header.record_bytes();
    let available = bytes.len() - header_bytes;
    header.record_count = match declared_records {
        -1 if record_bytes > 0 => {
            log::warn!("record count -1 in header; inferring from file size");
            available / record_bytes
        }
        n if n >= 0 => n as usize,
        n => return Err(IngestError::MalformedHeader(format!("record count {n}"))),
    };
    let expected = header_bytes + header.record_count * record_bytes;
    if bytes.len() < expected {
        return Err(IngestError::TruncatedFile { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        log::warn!("{} trailing bytes after last data record ignored", bytes.len() - expected);
    }

    let mut samples: Vec<Vec<i16>> = header
        .signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * header.record_count))
        .collect();
    let mut pos = header_bytes;
    for _ in 0..header.record_count {
        for (sig, out) in header.signals.iter().zip(samples.iter_mut()) {
            let chunk = &bytes[pos..pos + sig.samples_per_record * 2];
            out.extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            pos += chunk.len();
        }
    }
    Ok(EdfFile { header, samples })
}

fn put_text(out: &mut Vec<u8>, value: &str, width: usize, name: &str) -> Result<()> {
    if value.len() > width || !value.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(IngestError::MalformedHeader(format!(
            "{name} {value:?} is not printable ASCII of at most {width} bytes"
        )));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal rendering of `v` that fits in `width` characters.
fn format_float(v: f64, width: usize) -> Option<String> {
    let plain = format!("{v}");
    if plain.len() <= width {
        return Some(plain);
    }
    (0..width).rev().find_map(|prec| {
        let s = format!("{v:.prec$}");
        (s.len() <= width).then_some(s)
    })
}

/// Serializes a header and per-signal digital samples to EDF bytes.
///
/// `header.header_bytes` and `header.record_count` must agree with the
/// signal table and sample lengths.
pub fn write_edf(header: &EdfHeader, samples: &[Vec<i16>]) -> Result<Vec<u8>> {
    let ns = header.signals.len();
    if ns == 0 || samples.len() != ns {
        return Err(IngestError::MalformedHeader("signal table does not match sample arrays".into()));
    }
    if header.header_bytes != FIXED_HEADER + SIGNAL_HEADER * ns {
        return Err(IngestError::MalformedHeader(format!(
            "header_bytes {} != 256 + 256 x {ns}",
            header.header_bytes
        )));
    }
    for (sig, data) in header.signals.iter().zip(samples) {
        if data.len() != sig.samples_per_record * header.record_count {
            return Err(IngestError::MalformedHeader(format!(
                "signal {:?} has {} samples, expected {}",
                sig.label,
                data.len(),
                sig.samples_per_record * header.record_count
            )));
        }
    }
    let year = header.start.year();
    if !(1985..=2084).contains(&year) {
        return Err(IngestError::MalformedHeader(format!("year {year} not representable")));
    }

    let mut out = Vec::with_capacity(header.header_bytes + header.record_count * header.record_bytes());
    put_text(&mut out, &header.version, 8, "version")?;
    put_text(&mut out, &header.patient_id, 80, "patient id")?;
    put_text(&mut out, &header.recording_id, 80, "recording id")?;
    let s = header.start;
    put_text(&mut out, &format!("{:02}.{:02}.{:02}", s.day(), s.month(), year % 100), 8, "start date")?;
    put_text(&mut out, &format!("{:02}.{:02}.{:02}", s.hour(), s.minute(), s.second()), 8, "start time")?;
    put_text(&mut out, &header.header_bytes.to_string(), 8, "header bytes")?;
    put_text(&mut out, &header.reserved, 44, "reserved")?;
    put_text(&mut out, &header.record_count.to_string(), 8, "record count")?;
    let duration = format_float(header.record_duration, 8)
        .ok_or_else(|| IngestError::MalformedHeader("record duration too wide".into()))?;
    put_text(&mut out, &duration, 8, "record duration")?;
    put_text(&mut out, &ns.to_string(), 4, "signal count")?;

    let float = |v: f64, name: &str| {
        format_float(v, 8).ok_or_else(|| IngestError::MalformedHeader(format!("{name} {v} too wide")))
    };
    let sigs = &header.signals;
    for s in sigs {
        put_text(&mut out, &s.label, 16, "label")?;
    }
    for s in sigs {
        put_text(&mut out, &s.transducer, 80, "transducer")?;
    }
    for s in sigs {
        put_text(&mut out, &s.physical_dimension, 8, "physical dimension")?;
    }
    for s in sigs {
        put_text(&mut out, &float(s.physical_min, "physical minimum")?, 8, "physical minimum")?;
    }
    for s in sigs {
        put_text(&mut out, &float(s.physical_max, "physical maximum")?, 8, "physical maximum")?;
    }
    for s in sigs {
        put_text(&mut out, &s.digital_min.to_string(), 8, "digital minimum")?;
    }
    for s in sigs {
        put_text(&mut out, &s.digital_max.to_string(), 8, "digital maximum")?;
    }
    for s in sigs {
        put_text(&mut out, &s.prefiltering, 80, "prefiltering")?;
    }
    for s in sigs {
        put_text(&mut out, &s.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for s in sigs {
        put_text(&mut out, &s.reserved, 32, "signal reserved")?;
    }
    debug_assert_eq!(out.len(), header.header_bytes);

    for r in 0..header.record_count {
        for (sig, data) in sigs.iter().zip(samples) {
            let n = sig.samples_per_record;
            for v in &data[r * n..(r + 1) * n] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Maps digital samples to physical units.
///
/// Samples outside `[digital_min, digital_max]` are clamped and a warning is logged.
pub fn calibrate(digital: &[i16], signal: &SignalHeader) -> Result<Vec<f64>> {
    if signal.digital_min == signal.digital_max {
        return Err(IngestError::DegenerateCalibration(signal.label.clone()));
    }
    let (dmin, dmax) = (signal.digital_min, signal.digital_max);
    let gain = signal.gain();
    let mut clamped = 0usize;
    let out = digital
        .iter()
        .map(|&d| {
            let d = i32::from(d);
            let c = d.clamp(dmin.min(dmax), dmax.max(dmin));
            if c != d {
                clamped += 1;
            }
            signal.physical_min + f64::from(c - dmin) * gain
        })
        .collect();
    if clamped > 0 {
        log::warn!(
            "signal {:?}: {clamped} samples outside [{dmin}, {dmax}] clamped",
            signal.label
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn eeg_signal(samples_per_record: usize) -> SignalHeader {
        SignalHeader {
            label: "EEG Fpz-Cz".into(),
            transducer: "Ag-AgCl electrodes".into(),
            physical_dimension: "uV".into(),
            physical_min: -204.8,
            physical_max: 204.7,
            digital_min: -2048,
            digital_max: 2047,
            prefiltering: "HP:0.5Hz".into(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    fn header(signals: Vec<SignalHeader>, records: usize, duration: f64) -> EdfHeader {
        EdfHeader {
            version: "0".into(),
            patient_id: "X X X X".into(),
            recording_id: "Startdate X X X X".into(),
            start: NaiveDate::from_ymd_opt(1989, 4, 24).unwrap().and_hms_opt(16, 13, 0).unwrap(),
            header_bytes: 256 + 256 * signals.len(),
            reserved: String::new(),
            record_count: records,
            record_duration: duration,
            signals,
        }
    }

    #[test]
    fn two_records_of_3000() {
        let h = header(vec![eeg_signal(3000)], 2, 30.0);
        let data: Vec<i16> = (0..6000).map(|i| (i % 4000 - 2000) as i16).collect();
        let bytes = write_edf(&h, &[data.clone()]).unwrap();
        let f = parse_edf(&bytes).unwrap();
        assert_eq!(f.header.signal_count(), 1);
        assert_eq!(f.samples[0].len(), 6000);
        assert_eq!(f.samples[0], data);
        assert_eq!(f.header, h);
    }

    #[test]
    fn interleaving_is_per_record() {
        let mut a = eeg_signal(2);
        a.label = "A".into();
        let mut b = eeg_signal(3);
        b.label = "B".into();
        let h = header(vec![a, b], 2, 1.0);
        let bytes = write_edf(&h, &[vec![1, 2, 3, 4], vec![10, 20, 30, 40, 50, 60]]).unwrap();
        let words: Vec<i16> = bytes[h.header_bytes..]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(words, vec![1, 2, 10, 20, 30, 3, 4, 40, 50, 60]);
    }

    #[test]
    fn header_bytes_mismatch_is_malformed() {
        let h = header(vec![eeg_signal(10)], 1, 1.0);
        let mut bytes = write_edf(&h, &[vec![0; 10]]).unwrap();
        bytes[184..192].copy_from_slice(b"768     ");
        assert!(matches!(parse_edf(&bytes), Err(IngestError::MalformedHeader(_))));
    }

    #[test]
    fn non_numeric_field_is_malformed() {
        let h = header(vec![eeg_signal(10)], 1, 1.0);
        let mut bytes = write_edf(&h, &[vec![0; 10]]).unwrap();
        bytes[236..244].copy_from_slice(b"ten     ");
        assert!(matches!(parse_edf(&bytes), Err(IngestError::MalformedHeader(_))));
    }

    #[test]
    fn truncated_data_is_reported() {
        let h = header(vec![eeg_signal(10)], 3, 1.0);
        let bytes = write_edf(&h, &[vec![0; 30]]).unwrap();
        let err = parse_edf(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, IngestError::TruncatedFile { expected, .. } if expected == bytes.len()));
        assert!(matches!(parse_edf(&bytes[..100]), Err(IngestError::TruncatedFile { .. })));
    }

    #[test]
    fn unknown_record_count_is_inferred() {
        let h = header(vec![eeg_signal(10)], 3, 1.0);
        let mut bytes = write_edf(&h, &[vec![7; 30]]).unwrap();
        bytes[236..244].copy_from_slice(b"-1      ");
        let f = parse_edf(&bytes).unwrap();
        assert_eq!(f.header.record_count, 3);
    }

    #[test]
    fn missing_signal() {
        let h = header(vec![eeg_signal(10)], 1, 1.0);
        let f = parse_edf(&write_edf(&h, &[vec![0; 10]]).unwrap()).unwrap();
        assert!(matches!(f.signal("EEG Pz-Oz"), Err(IngestError::SignalNotFound(_))));
        assert!(f.signal("EEG Fpz-Cz").is_ok());
    }

    #[test]
    fn calibration_examples() {
        let s = eeg_signal(1);
        // p = pmin + (d - dmin) * (pmax - pmin) / (dmax - dmin), by hand:
        // d = 0:     -204.8 + 2048 * 0.1 = 0.0
        // d = -2048: -204.8
        // d = 2047:  -204.8 + 4095 * 0.1 = 204.7
        // d = 1000:  -204.8 + 3048 * 0.1 = 100.0
        let p = calibrate(&[0, -2048, 2047, 1000], &s).unwrap();
        let expected = [0.0, -204.8, 204.7, 100.0];
        for (a, e) in p.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn calibration_clamps_out_of_range() {
        let s = eeg_signal(1);
        let p = calibrate(&[3000, -3000], &s).unwrap();
        assert!((p[0] - 204.7).abs() < 1e-9);
        assert!((p[1] + 204.8).abs() < 1e-9);
    }

    #[test]
    fn degenerate_calibration() {
        let mut s = eeg_signal(1);
        s.digital_max = s.digital_min;
        assert!(matches!(calibrate(&[0], &s), Err(IngestError::DegenerateCalibration(_))));
    }

    #[test]
    fn float_formatting_fits_width() {
        assert_eq!(format_float(-204.8, 8).unwrap(), "-204.8");
        assert_eq!(format_float(1.0 / 3.0, 8).unwrap(), "0.333333");
        assert!(format_float(1e12, 8).is_none());
    }
}
