//! Manifest-driven corpus download with resume, retries and SHA-256 checks.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the base URL and to the dataset root.
    pub path: String,
    pub sha256: String,
    pub size: Option<u64>,
}

#[derive(Debug)]
pub enum FetchError {
    Manifest(String),
    Network { url: String, message: String },
    ChecksumMismatch { path: String, expected: String, found: String },
    Io(io::Error),
}

impl std::fmt::Display for FetchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FetchError::Manifest(m) => write!(f, "manifest: {m}"),
            FetchError::Network { url, message } => {
                write!(f, "could not download {url}: {message} (check the network connection and fetch.base_url)")
            }
            FetchError::ChecksumMismatch { path, expected, found } => {
                write!(f, "{path}: sha256 {found} does not match the manifest's {expected}")
            }
            FetchError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FetchError {}

impl From<io::Error> for FetchError {
    fn from(e: io::Error) -> Self {
        FetchError::Io(e)
    }
}

/// Reads `sha256 path [size]` lines; `#` starts a comment. The `*` binary
/// marker written by `sha256sum -b` is accepted.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, FetchError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split_once('#').map_or(line, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| FetchError::Manifest(format!("line {}: {m}", n + 1));
        if !(2..=3).contains(&fields.len()) {
            return Err(bad("expected `sha256 path [size]`"));
        }
        let sha = fields[0].to_ascii_lowercase();
        if sha.len() != 64 || !sha.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad("checksum must be 64 hex digits"));
        }
        let path = fields[1].trim_start_matches('*').to_string();
        if path.is_empty() || path.starts_with('/') || path.split('/').any(|c| c == "..") {
            return Err(bad("path must be relative and stay inside the dataset root"));
        }
        let size = match fields.get(2) {
            Some(s) => Some(s.parse().map_err(|_| bad("size must be an integer"))?),
            None => None,
        };
        out.push(ManifestEntry { path, sha256: sha, size });
    }
    Ok(out)
}

/// A response body; `resumed` is true when the server honoured the start
/// offset (HTTP 206), false when it sent the whole file.
pub struct Body {
    pub reader: Box<dyn Read + Send>,
    pub resumed: bool,
}

pub trait Transport: Sync {
    fn get(&self, url: &str, offset: u64) -> Result<Body, FetchError>;
}

/// Plain HTTP(S) with range requests.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self { agent: ureq::AgentBuilder::new().timeout_connect(Duration::from_secs(20)).build() }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, offset: u64) -> Result<Body, FetchError> {
        let mut req = self.agent.get(url);
        if offset > 0 {
            req = req.set("Range", &format!("bytes={offset}-"));
        }
        let net = |message: String| FetchError::Network { url: url.to_string(), message };
        match req.call() {
            Ok(resp) => {
                let resumed = resp.status() == 206;
                Ok(Body { reader: Box::new(resp.into_reader()), resumed })
            }
            Err(ureq::Error::Status(code, _)) => Err(net(format!("HTTP {code}"))),
            Err(e) => Err(net(e.to_string())),
        }
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug)]
pub struct FetchOptions {
    pub base_url: String,
    pub retries: usize,
    pub backoff: Duration,
    pub workers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FetchSummary {
    pub downloaded: Vec<String>,
    pub skipped: Vec<String>,
}

fn url_for(base: &str, path: &str) -> String {
    if base.ends_with('/') { format!("{base}{path}") } else { format!("{base}/{path}") }
}

fn part_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".part");
    dest.with_file_name(name)
}

fn is_valid(path: &Path, e: &ManifestEntry) -> io::Result<bool> {
    let meta = match fs::metadata(path) {
        Ok(m) => m,
        Err(err) if err.kind() == io::ErrorKind::NotFound => return Ok(false),
        Err(err) => return Err(err),
    };
    if e.size.is_some_and(|s| s != meta.len()) {
        return Ok(false);
    }
    Ok(sha256_file(path)? == e.sha256)
}

/// Downloads one entry unless a verified copy exists. Returns whether a
/// download happened.
pub fn fetch_entry(e: &ManifestEntry, root: &Path, transport: &dyn Transport, opts: &FetchOptions) -> Result<bool, FetchError> {
    let dest = root.join(&e.path);
    if is_valid(&dest, e)? {
        return Ok(false);
    }
    if dest.exists() {
        log::warn!("{}: local copy fails verification, downloading again", e.path);
        fs::remove_file(&dest)?;
    }
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    let part = part_path(&dest);
    let url = url_for(&opts.base_url, &e.path);
    let mut last = None;
    for attempt in 0..=opts.retries {
        if attempt > 0 {
            let wait = opts.backoff * (1u32 << (attempt - 1).min(16));
            log::info!("{}: retry {attempt} of {} in {wait:?}", e.path, opts.retries);
            thread::sleep(wait);
        }
        match download(&url, &part, transport) {
            Ok(()) => {}
            Err(err @ FetchError::Network { .. }) => {
                log::warn!("{err}");
                last = Some(err);
                continue;
            }
            Err(err) => return Err(err),
        }
        let found = sha256_file(&part)?;
        if found == e.sha256 {
            fs::rename(&part, &dest)?;
            return Ok(true);
        }
        // A corrupt partial file cannot be resumed; start over.
        fs::remove_file(&part)?;
        last = Some(FetchError::ChecksumMismatch { path: e.path.clone(), expected: e.sha256.clone(), found });
    }
    Err(last.expect("at least one attempt"))
}

/// Appends to `part` from its current length.
fn download(url: &str, part: &Path, transport: &dyn Transport) -> Result<(), FetchError> {
    let offset = fs::metadata(part).map(|m| m.len()).unwrap_or(0);
    let mut body = transport.get(url, offset)?;
    let mut file = if offset > 0 && body.resumed {
        OpenOptions::new().append(true).open(part)?
    } else {
        File::create(part)?
    };
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = match body.reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => {
                file.flush()?;
                return Err(FetchError::Network { url: url.to_string(), message: e.to_string() });
            }
        };
        file.write_all(&buf[..n])?;
    }
    file.flush()?;
    Ok(())
}

/// Fetches every entry with up to `opts.workers` files in flight. Stops
/// reporting at the first failure but lets in-flight files finish.
pub fn fetch_all(
    entries: &[ManifestEntry],
    root: &Path,
    transport: &dyn Transport,
    opts: &FetchOptions,
) -> Result<FetchSummary, FetchError> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<bool, FetchError>>>> = Mutex::new((0..entries.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..opts.workers.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(e) = entries.get(i) else { break };
                let r = fetch_entry(e, root, transport, opts);
                let failed = r.is_err();
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                if failed {
                    next.store(entries.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let mut summary = FetchSummary::default();
    for (e, r) in entries.iter().zip(results.into_inner().expect("workers joined")) {
        match r {
            Some(Ok(true)) => summary.downloaded.push(e.path.clone()),
            Some(Ok(false)) => summary.skipped.push(e.path.clone()),
            Some(Err(err)) => return Err(err),
            None => {}
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::io::Cursor;
    use std::sync::atomic::AtomicUsize;

    use super::*;

    fn sha(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    /// Serves files from memory. Each URL can be made to fail its first
    /// `flaky` requests, or to cut the body after `cut` bytes once.
    #[derive(Default)]
    struct Memory {
        files: HashMap<String, Vec<u8>>,
        flaky: Mutex<HashMap<String, usize>>,
        cut: Mutex<HashMap<String, usize>>,
        no_ranges: bool,
        requests: AtomicUsize,
        offsets: Mutex<Vec<u64>>,
    }

    struct Failing<R>(R, usize);

    impl<R: Read> Read for Failing<R> {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            if self.1 == 0 {
                return Err(io::Error::new(io::ErrorKind::ConnectionReset, "reset"));
            }
            let n = buf.len().min(self.1);
            let got = self.0.read(&mut buf[..n])?;
            self.1 -= got;
            Ok(got)
        }
    }

    impl Transport for Memory {
        fn get(&self, url: &str, offset: u64) -> Result<Body, FetchError> {
            self.requests.fetch_add(1, Ordering::SeqCst);
            self.offsets.lock().unwrap().push(offset);
            if let Some(n) = self.flaky.lock().unwrap().get_mut(url).filter(|n| **n > 0) {
                *n -= 1;
                return Err(FetchError::Network { url: url.into(), message: "connection refused".into() });
            }
            let data = self
                .files
                .get(url)
                .ok_or_else(|| FetchError::Network { url: url.into(), message: "HTTP 404".into() })?
                .clone();
            let (start, resumed) = if self.no_ranges { (0, false) } else { (offset as usize, offset > 0) };
            let body = Cursor::new(data[start..].to_vec());
            let reader: Box<dyn Read + Send> = match self.cut.lock().unwrap().remove(url) {
                Some(n) => Box::new(Failing(body, n)),
                None => Box::new(body),
            };
            Ok(Body { reader, resumed })
        }
    }

    fn opts() -> FetchOptions {
        FetchOptions { base_url: "mem://x".into(), retries: 2, backoff: Duration::ZERO, workers: 2 }
    }

    fn setup(contents: &[(&str, &[u8])]) -> (Memory, Vec<ManifestEntry>) {
        let mut m = Memory::default();
        let mut entries = Vec::new();
        for (p, c) in contents {
            m.files.insert(format!("mem://x/{p}"), c.to_vec());
            entries.push(ManifestEntry { path: p.to_string(), sha256: sha(c), size: Some(c.len() as u64) });
        }
        (m, entries)
    }

    #[test]
    fn manifest_lines() {
        let h = "a".repeat(64);
        let m = parse_manifest(&format!("# list\n{h}  sleep/a.edf\n{h} *b.edf 12\n")).unwrap();
        assert_eq!(m[0], ManifestEntry { path: "sleep/a.edf".into(), sha256: h.clone(), size: None });
        assert_eq!(m[1].size, Some(12));
        assert!(parse_manifest("abc a.edf").is_err());
        assert!(parse_manifest(&format!("{h} ../etc/passwd")).is_err());
        assert!(parse_manifest(&format!("{h} /abs")).is_err());
    }

    #[test]
    fn downloads_then_skips() {
        let dir = tempfile::tempdir().unwrap();
        let (t, entries) = setup(&[("a.edf", b"first file"), ("sub/b.edf", b"second")]);
        let s = fetch_all(&entries, dir.path(), &t, &opts()).unwrap();
        assert_eq!(s.downloaded.len(), 2);
        assert_eq!(fs::read(dir.path().join("sub/b.edf")).unwrap(), b"second");
        let before = t.requests.load(Ordering::SeqCst);
        let s = fetch_all(&entries, dir.path(), &t, &opts()).unwrap();
        assert_eq!(s.skipped.len(), 2);
        assert_eq!(t.requests.load(Ordering::SeqCst), before);
    }

    #[test]
    fn corrupted_file_is_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let (t, entries) = setup(&[("a.edf", b"good bytes")]);
        fs::write(dir.path().join("a.edf"), b"bad bytes!").unwrap();
        let s = fetch_all(&entries, dir.path(), &t, &opts()).unwrap();
        assert_eq!(s.downloaded, vec!["a.edf".to_string()]);
        assert_eq!(fs::read(dir.path().join("a.edf")).unwrap(), b"good bytes");
    }

    #[test]
    fn interrupted_download_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let content: Vec<u8> = (0..200_000u32).map(|i| (i % 251) as u8).collect();
        let (t, entries) = setup(&[("big.edf", &content)]);
        t.cut.lock().unwrap().insert("mem://x/big.edf".into(), 70_000);
        fetch_all(&entries, dir.path(), &t, &opts()).unwrap();
        assert_eq!(fs::read(dir.path().join("big.edf")).unwrap(), content);
        assert_eq!(*t.offsets.lock().unwrap(), vec![0, 70_000]);
        assert!(!dir.path().join("big.edf.part").exists());
    }

    #[test]
    fn server_without_ranges_restarts() {
        let dir = tempfile::tempdir().unwrap();
        let (mut t, entries) = setup(&[("a.edf", b"0123456789")]);
        t.no_ranges = true;
        fs::write(dir.path().join("a.edf.part"), b"01234").unwrap();
        fetch_all(&entries, dir.path(), &t, &opts()).unwrap();
        assert_eq!(fs::read(dir.path().join("a.edf")).unwrap(), b"0123456789");
    }

    #[test]
    fn retries_then_fails() {
        let dir = tempfile::tempdir().unwrap();
        let (t, entries) = setup(&[("a.edf", b"x")]);
        t.flaky.lock().unwrap().insert("mem://x/a.edf".into(), 2);
        assert_eq!(fetch_all(&entries, dir.path(), &t, &opts()).unwrap().downloaded.len(), 1);

        let dir = tempfile::tempdir().unwrap();
        t.flaky.lock().unwrap().insert("mem://x/a.edf".into(), 10);
        let err = fetch_all(&entries, dir.path(), &t, &opts()).unwrap_err();
        assert!(matches!(err, FetchError::Network { .. }));
        assert!(err.to_string().contains("fetch.base_url"));
    }

    #[test]
    fn checksum_mismatch_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (t, mut entries) = setup(&[("a.edf", b"payload")]);
        entries[0].sha256 = sha(b"other");
        entries[0].size = None;
        let err = fetch_all(&entries, dir.path(), &t, &opts()).unwrap_err();
        assert!(matches!(err, FetchError::ChecksumMismatch { .. }));
        assert!(!dir.path().join("a.edf").exists());
    }
}
