//! Recording discovery, per-recording ingestion and the on-disk epoch cache.
//!
//! The cache directory holds:
//!
//! - `epochs.bin`: labels and samples in the binary epoch cache layout
//! - `epochs.index.json`: subject id and epoch index of every cached epoch
//! - `stats.json`: normalization quantiles per recording
//! - `class_counts.txt`: per-stage counts
//! - `fingerprint.json`: inputs the cache was built from

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use msdan::ingest::{
    epoch_recording, parse_edf, parse_hypnogram, parse_hypnogram_text, read_epoch_cache, write_epoch_cache,
    AnnotationSource, EegRecording, LabeledEpoch,
};
use msdan::preprocess::{compute_stats, normalize, NormalizationStats};
use msdan::{StageLabel, NUM_STAGES};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, ErrorKind, Tag};
use crate::fetch::sha256_file;

/// One night: a PSG file and, when found, its hypnogram.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingFiles {
    /// File stem without its final character, e.g. `SC4001E` for
    /// `SC4001E0-PSG.edf`; shared with the hypnogram `SC4001EC-Hypnogram.edf`.
    pub id: String,
    pub psg: PathBuf,
    pub hypnogram: Option<PathBuf>,
}

fn stem_before(name: &str, suffix: &str) -> Option<String> {
    name.strip_suffix(suffix).map(str::to_string)
}

fn pairing_key(stem: &str) -> &str {
    let mut chars = stem.char_indices();
    match chars.next_back() {
        Some((i, _)) if i > 0 => &stem[..i],
        _ => stem,
    }
}

/// Finds `*-PSG.edf` files under `root` (recursively) and pairs each with a
/// `*-Hypnogram.edf` or `*-Hypnogram.txt` whose stem agrees in all but the
/// last character. Sorted by id.
pub fn discover(root: &Path) -> CliResult<Vec<RecordingFiles>> {
    let mut psg = BTreeMap::new();
    let mut hyp = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).tag(ErrorKind::Data, || format!("listing {}", dir.display()))?;
        for entry in entries {
            let path = entry.tag(ErrorKind::Data, || format!("listing {}", dir.display()))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            if let Some(stem) = stem_before(name, "-PSG.edf") {
                psg.insert(pairing_key(&stem).to_string(), path.clone());
            } else if let Some(stem) = stem_before(name, "-Hypnogram.edf").or_else(|| stem_before(name, "-Hypnogram.txt")) {
                hyp.insert(pairing_key(&stem).to_string(), path.clone());
            }
        }
    }
    Ok(psg
        .into_iter()
        .map(|(id, p)| RecordingFiles { hypnogram: hyp.get(&id).cloned(), id, psg: p })
        .collect())
}

/// Calibrated, normalized channel of one PSG file.
pub fn load_signal(psg: &Path, channel: &str, id: &str) -> CliResult<(EegRecording, NormalizationStats)> {
    let bytes = fs::read(psg).tag(ErrorKind::Data, || format!("reading {}", psg.display()))?;
    let edf = parse_edf(&bytes).tag(ErrorKind::Data, || format!("parsing {}", psg.display()))?;
    let mut rec = EegRecording::from_edf(&edf, channel, id).tag(ErrorKind::Data, || format!("{}", psg.display()))?;
    let stats = compute_stats(&rec.samples).tag(ErrorKind::Data, || format!("normalizing {id}"))?;
    rec.samples = normalize(&rec.samples, &stats).tag(ErrorKind::Data, || format!("normalizing {id}"))?;
    Ok((rec, stats))
}

pub fn load_intervals(path: &Path) -> CliResult<Vec<msdan::ingest::StageInterval>> {
    let bytes = fs::read(path).tag(ErrorKind::Data, || format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "txt") {
        let text = String::from_utf8(bytes).tag(ErrorKind::Data, || format!("{} is not UTF-8", path.display()))?;
        parse_hypnogram_text(&text)
    } else {
        let edf = parse_edf(&bytes).tag(ErrorKind::Data, || format!("parsing {}", path.display()))?;
        parse_hypnogram(AnnotationSource::Edf(&edf))
    };
    parsed.tag(ErrorKind::Data, || format!("reading stages from {}", path.display()))
}

/// Labeled, normalized epochs of one night.
pub fn load_recording(files: &RecordingFiles, channel: &str) -> CliResult<(Vec<LabeledEpoch>, NormalizationStats)> {
    let hyp = files
        .hypnogram
        .as_ref()
        .ok_or_else(|| CliError::data(format!("{}: no hypnogram found next to {}", files.id, files.psg.display())))?;
    let intervals = load_intervals(hyp)?;
    let (rec, stats) = load_signal(&files.psg, channel, &files.id)?;
    let epochs = epoch_recording(&rec, &intervals).tag(ErrorKind::Data, || format!("epoching {}", files.id))?;
    Ok((epochs, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: PathBuf,
    pub len: u64,
    pub mtime_ns: u128,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub channel: String,
    pub max_recordings: Option<usize>,
    pub files: Vec<FileStamp>,
}

fn stamp_meta(path: &Path) -> CliResult<(u64, u128)> {
    let meta = fs::metadata(path).tag(ErrorKind::Data, || format!("reading {}", path.display()))?;
    let mtime = meta.modified().ok().and_then(|t| t.duration_since(UNIX_EPOCH).ok()).map_or(0, |d| d.as_nanos());
    Ok((meta.len(), mtime))
}

/// Stamps for `paths`, reusing a previous stamp's hash when size and mtime
/// are unchanged.
fn stamp_files(paths: &[PathBuf], previous: Option<&Fingerprint>) -> CliResult<Vec<FileStamp>> {
    paths
        .par_iter()
        .map(|p| {
            let (len, mtime_ns) = stamp_meta(p)?;
            let known = previous
                .and_then(|f| f.files.iter().find(|s| &s.path == p && s.len == len && s.mtime_ns == mtime_ns));
            let sha256 = match known {
                Some(s) => s.sha256.clone(),
                None => sha256_file(p).tag(ErrorKind::Data, || format!("hashing {}", p.display()))?,
            };
            Ok(FileStamp { path: p.clone(), len, mtime_ns, sha256 })
        })
        .collect()
}

/// Content equality: same channel, selection and file hashes. Modification
/// times alone do not invalidate a cache.
fn same_inputs(a: &Fingerprint, b: &Fingerprint) -> bool {
    a.channel == b.channel
        && a.max_recordings == b.max_recordings
        && a.files.len() == b.files.len()
        && a.files.iter().zip(&b.files).all(|(x, y)| x.path == y.path && x.sha256 == y.sha256)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EpochKey {
    subject_id: String,
    epoch_index: usize,
}

/// Epochs from every usable recording, in recording order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub epochs: Vec<LabeledEpoch>,
    pub stats: BTreeMap<String, NormalizationStats>,
    /// Recordings that could not be used, with the reason.
    pub failures: Vec<(String, String)>,
    pub from_cache: bool,
}

impl Dataset {
    pub fn class_counts(&self) -> [u64; NUM_STAGES] {
        let mut c = [0u64; NUM_STAGES];
        for e in &self.epochs {
            c[e.label.index()] += 1;
        }
        c
    }

    pub fn subjects(&self) -> Vec<String> {
        self.epochs.iter().map(|e| e.subject_id.clone()).collect()
    }
}

/// Per-stage counts of the Sleep-EDF Fpz-Cz corpus as published, W, N1, N2, N3, R.
pub const REFERENCE_COUNTS: [(StageLabel, u64); NUM_STAGES] = [
    (StageLabel::W, 8030),
    (StageLabel::N1, 604),
    (StageLabel::N2, 3621),
    (StageLabel::N3, 1299),
    (StageLabel::R, 1609),
];

pub fn class_count_table(counts: &[u64; NUM_STAGES]) -> String {
    let total: u64 = counts.iter().sum();
    let ref_total: u64 = REFERENCE_COUNTS.iter().map(|r| r.1).sum();
    let pct = |n: u64, d: u64| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let mut s = String::from("stage     count       %   reference       %\n");
    for (stage, r) in REFERENCE_COUNTS {
        let n = counts[stage.index()];
        s.push_str(&format!("{:<5} {:>9} {:>7.1} {:>11} {:>7.1}\n", stage.name(), n, pct(n, total), r, pct(r, ref_total)));
    }
    s.push_str(&format!("total {total:>9} {:>7.1} {ref_total:>11} {:>7.1}\n", 100.0, 100.0));
    s
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).tag(ErrorKind::Runtime, || "serializing".into())?;
    text.push('\n');
    fs::write(path, text).tag(ErrorKind::Runtime, || format!("writing {}", path.display()))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let f = File::open(path).tag(ErrorKind::Data, || format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).tag(ErrorKind::Data, || format!("parsing {}", path.display()))
}

fn read_cache(dir: &Path) -> CliResult<Dataset> {
    let path = dir.join("epochs.bin");
    let f = File::open(&path).tag(ErrorKind::Data, || format!("opening {}", path.display()))?;
    let raw = read_epoch_cache(BufReader::new(f)).tag(ErrorKind::Data, || format!("reading {}", path.display()))?;
    let keys: Vec<EpochKey> = read_json(&dir.join("epochs.index.json"))?;
    if keys.len() != raw.len() {
        return Err(CliError::data(format!("cache index lists {} epochs, cache holds {}", keys.len(), raw.len())));
    }
    let epochs = raw
        .into_iter()
        .zip(keys)
        .map(|((label, samples), k)| LabeledEpoch { samples, label, subject_id: k.subject_id, epoch_index: k.epoch_index })
        .collect();
    let stats = read_json(&dir.join("stats.json"))?;
    Ok(Dataset { epochs, stats, failures: Vec::new(), from_cache: true })
}

fn write_cache(dir: &Path, ds: &Dataset, fp: &Fingerprint) -> CliResult<()> {
    fs::create_dir_all(dir).tag(ErrorKind::Runtime, || format!("creating {}", dir.display()))?;
    let path = dir.join("epochs.bin");
    let f = File::create(&path).tag(ErrorKind::Runtime, || format!("creating {}", path.display()))?;
    write_epoch_cache(BufWriter::new(f), &ds.epochs).tag(ErrorKind::Data, || format!("writing {}", path.display()))?;
    let keys: Vec<EpochKey> =
        ds.epochs.iter().map(|e| EpochKey { subject_id: e.subject_id.clone(), epoch_index: e.epoch_index }).collect();
    write_json(&dir.join("epochs.index.json"), &keys)?;
    write_json(&dir.join("stats.json"), &ds.stats)?;
    fs::write(dir.join("class_counts.txt"), class_count_table(&ds.class_counts()))
        .tag(ErrorKind::Runtime, || "writing class_counts.txt".into())?;
    // Written last: a cache without a fingerprint is never reused.
    write_json(&dir.join("fingerprint.json"), fp)
}

/// Builds or reuses the epoch cache for `cfg`. Recordings that fail are
/// logged and skipped; no usable recording at all is a data error.
pub fn prepare(cfg: &RunConfig) -> CliResult<Dataset> {
    let root = &cfg.dataset_root;
    if !root.is_dir() {
        return Err(CliError::data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut recordings = discover(root)?;
    if let Some(n) = cfg.max_recordings {
        recordings.truncate(n);
    }
    if recordings.is_empty() {
        return Err(CliError::data(format!("no *-PSG.edf files under {}", root.display())));
    }
    let cache = cfg.cache_dir();
    let fp_path = cache.join("fingerprint.json");
    let previous: Option<Fingerprint> = if fp_path.exists() { read_json(&fp_path).ok() } else { None };
    let inputs: Vec<PathBuf> =
        recordings.iter().flat_map(|r| std::iter::once(r.psg.clone()).chain(r.hypnogram.clone())).collect();
    let fp = Fingerprint { channel: cfg.channel.clone(), max_recordings: cfg.max_recordings, files: stamp_files(&inputs, previous.as_ref())? };
    if previous.as_ref().is_some_and(|p| same_inputs(p, &fp)) {
        match read_cache(&cache) {
            Ok(ds) => {
                log::info!("reusing epoch cache in {}", cache.display());
                if previous.as_ref() != Some(&fp) {
                    write_json(&fp_path, &fp)?;
                }
                return Ok(ds);
            }
            Err(e) => log::warn!("epoch cache unreadable, rebuilding: {e}"),
        }
    }

    let loaded: Vec<_> = recordings.par_iter().map(|r| (r.id.clone(), load_recording(r, &cfg.channel))).collect();
    let mut ds = Dataset { epochs: Vec::new(), stats: BTreeMap::new(), failures: Vec::new(), from_cache: false };
    for (id, result) in loaded {
        match result {
            Ok((epochs, stats)) => {
                ds.epochs.extend(epochs);
                ds.stats.insert(id, stats);
            }
            Err(e) => {
                log::error!("skipping {id}: {e}");
                ds.failures.push((id, e.to_string()));
            }
        }
    }
    if ds.epochs.is_empty() {
        return Err(CliError::data(format!("no usable recordings under {}", root.display())));
    }
    write_cache(&cache, &ds, &fp)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use msdan::synthetic::synthetic_night;

    use super::*;

    fn write_night(dir: &Path, stem: &str, runs: &[(&str, usize)], seed: u64) {
        let n = synthetic_night(stem, runs, 100, seed).unwrap();
        fs::write(dir.join(format!("{stem}0-PSG.edf")), n.recording).unwrap();
        fs::write(dir.join(format!("{stem}C-Hypnogram.edf")), n.hypnogram).unwrap();
    }

    #[test]
    fn pairs_psg_with_hypnogram() {
        let dir = tempfile::tempdir().unwrap();
        write_night(dir.path(), "SC4001E", &[("W", 2)], 0);
        fs::write(dir.path().join("SC4002E0-PSG.edf"), b"x").unwrap();
        fs::write(dir.path().join("notes.txt"), b"x").unwrap();
        let r = discover(dir.path()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].id, "SC4001E");
        assert!(r[0].hypnogram.as_ref().unwrap().ends_with("SC4001EC-Hypnogram.edf"));
        assert!(r[1].hypnogram.is_none());
    }

    #[test]
    fn prepare_skips_bad_recordings_and_reuses_cache() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_night(data.path(), "SC4001E", &[("W", 2), ("2", 2), ("R", 1)], 1);
        write_night(data.path(), "SC4011E", &[("W", 1), ("3", 2)], 2);
        fs::write(data.path().join("SC4021E0-PSG.edf"), b"not an edf").unwrap();
        let cfg = RunConfig { dataset_root: data.path().into(), output_dir: out.path().into(), ..Default::default() };
        let ds = prepare(&cfg).unwrap();
        assert!(!ds.from_cache);
        assert_eq!(ds.epochs.len(), 8);
        assert_eq!(ds.failures.len(), 1);
        assert_eq!(ds.class_counts()[StageLabel::W.index()], 3);
        assert_eq!(ds.stats.len(), 2);
        // Normalized: the 5th and 95th percentiles land on -1 and 1.
        let all: Vec<f64> = ds.epochs.iter().filter(|e| e.subject_id == "SC4011E").flat_map(|e| e.samples.iter().map(|&v| f64::from(v))).collect();
        let s = compute_stats(&all).unwrap();
        assert!((s.s05 + 1.0).abs() < 1e-3 && (s.s95 - 1.0).abs() < 1e-3);

        let again = prepare(&cfg).unwrap();
        assert!(again.from_cache);
        assert_eq!(again.epochs, ds.epochs);
        let table = fs::read_to_string(out.path().join("cache/class_counts.txt")).unwrap();
        assert!(table.contains("8030"));

        // Touching a file without changing it keeps the cache.
        let psg = data.path().join("SC4011E0-PSG.edf");
        let bytes = fs::read(&psg).unwrap();
        fs::write(&psg, &bytes).unwrap();
        assert!(prepare(&cfg).unwrap().from_cache);
        // Changing content rebuilds.
        write_night(data.path(), "SC4011E", &[("W", 3)], 3);
        let rebuilt = prepare(&cfg).unwrap();
        assert!(!rebuilt.from_cache);
        assert_eq!(rebuilt.epochs.len(), 8);
    }

    #[test]
    fn missing_root_is_data_error() {
        let cfg = RunConfig { dataset_root: "/nonexistent/msdan".into(), ..Default::default() };
        assert_eq!(prepare(&cfg).unwrap_err().kind, ErrorKind::Data);
    }

    #[test]
    fn table_lists_every_stage() {
        let t = class_count_table(&[1, 2, 3, 4, 10]);
        assert_eq!(t.lines().count(), 7);
        assert!(t.contains("total        20"));
    }
}
