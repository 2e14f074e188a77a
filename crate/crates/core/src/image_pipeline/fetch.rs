//! Deduplicated, rate-limited image downloads over a pluggable transport.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bloom::BloomFilter;

#[derive(Debug, Error)]
pub enum UrlError {
    #[error("invalid url {0:?}: {1}")]
    Parse(String, url::ParseError),
    #[error("url {0:?} has no host")]
    NoHost(String),
}

/// Lowercases scheme and host, drops the default port and the fragment,
/// keeps the query.
pub fn normalize_url(raw: &str) -> Result<String, UrlError> {
    let mut u = url::Url::parse(raw.trim()).map_err(|e| UrlError::Parse(raw.to_string(), e))?;
    if u.host_str().is_none() {
        return Err(UrlError::NoHost(raw.to_string()));
    }
    u.set_fragment(None);
    Ok(u.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub bytes: Vec<u8>,
    pub content_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("not found")]
    NotFound,
    #[error("transient: {0}")]
    Transient(String),
    #[error("permanent: {0}")]
    Permanent(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        matches!(self, TransportError::Transient(_))
    }
}

/// One request per call; retrying is the caller's job.
pub trait Transport: Send + Sync {
    fn request(&self, url: &str) -> Result<Response, TransportError>;
}

/// Serves `scheme://host/path` from `root/host/path`.
#[derive(Debug, Clone)]
pub struct FileTransport {
    root: PathBuf,
}

impl FileTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_for(&self, url: &str) -> Option<PathBuf> {
        let u = url::Url::parse(url).ok()?;
        let mut p = self.root.join(u.host_str()?);
        for seg in u.path_segments()? {
            if seg.is_empty() || seg == "." || seg == ".." {
                continue;
            }
            p.push(seg);
        }
        Some(p)
    }
}

impl Transport for FileTransport {
    fn request(&self, url: &str) -> Result<Response, TransportError> {
        let path = self.path_for(url).ok_or(TransportError::NotFound)?;
        match std::fs::read(&path) {
            Ok(bytes) => {
                let content_type = match path.extension().and_then(|e| e.to_str()) {
                    Some("pgm") => Some("image/x-portable-graymap".to_string()),
                    _ => None,
                };
                Ok(Response { bytes, content_type })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(TransportError::NotFound),
            Err(e) => Err(TransportError::Transient(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    pub retries: u32,
    pub per_host: usize,
    pub workers: usize,
    pub max_body_bytes: usize,
    pub bloom_bits: usize,
    pub bloom_hashes: u32,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            retries: 2,
            per_host: 4,
            workers: 8,
            max_body_bytes: 20 * 1024 * 1024,
            bloom_bits: 1 << 24,
            bloom_hashes: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchFailure {
    NotFound,
    Transient(String),
    Permanent(String),
    TooLarge(usize),
    /// The bloom filter has (probably) seen the URL in an earlier batch.
    AlreadySeen,
}

impl FetchFailure {
    pub fn code(&self) -> &'static str {
        match self {
            FetchFailure::NotFound => "not_found",
            FetchFailure::Transient(_) => "transient",
            FetchFailure::Permanent(_) => "permanent",
            FetchFailure::TooLarge(_) => "too_large",
            FetchFailure::AlreadySeen => "already_seen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskStatus {
    Pending,
    Done,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchTask {
    pub url: String,
    pub referer: String,
    pub attempts: u32,
    pub status: TaskStatus,
}

impl FetchTask {
    pub fn new(raw_url: &str, referer: &str) -> Result<Self, UrlError> {
        Ok(Self { url: normalize_url(raw_url)?, referer: referer.to_string(), attempts: 0, status: TaskStatus::Pending })
    }
}

pub type FetchOutcome = Result<Arc<Response>, FetchFailure>;

struct HostLimiter {
    cap: usize,
    inflight: Mutex<HashMap<String, usize>>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl HostLimiter {
    fn acquire(&self, host: &str) {
        let mut map = self.inflight.lock().expect("limiter lock");
        while map.get(host).copied().unwrap_or(0) >= self.cap {
            map = self.freed.wait(map).expect("limiter lock");
        }
        let n = map.entry(host.to_string()).or_default();
        *n += 1;
        self.peak.fetch_max(*n, Ordering::Relaxed);
    }

    fn release(&self, host: &str) {
        let mut map = self.inflight.lock().expect("limiter lock");
        if let Some(n) = map.get_mut(host) {
            *n -= 1;
        }
        self.freed.notify_all();
    }
}

/// Statistics of one [`fetch_images`] call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchStats {
    pub tasks: usize,
    pub distinct_urls: usize,
    pub skipped_by_bloom: usize,
    pub requests: usize,
    pub peak_per_host: usize,
}

fn fetch_one(url: &str, transport: &dyn Transport, cfg: &FetchConfig, requests: &AtomicUsize) -> (u32, FetchOutcome) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        requests.fetch_add(1, Ordering::Relaxed);
        let outcome = match transport.request(url) {
            Ok(r) if r.bytes.len() > cfg.max_body_bytes => Err(FetchFailure::TooLarge(r.bytes.len())),
            Ok(r) => Ok(Arc::new(r)),
            Err(TransportError::Transient(m)) if attempts <= cfg.retries => {
                log::debug!("retrying {url} after transient failure: {m}");
                continue;
            }
            Err(TransportError::Transient(m)) => Err(FetchFailure::Transient(m)),
            Err(TransportError::NotFound) => Err(FetchFailure::NotFound),
            Err(TransportError::Permanent(m)) => Err(FetchFailure::Permanent(m)),
        };
        return (attempts, outcome);
    }
}

/// Fetches every distinct URL at most once. URLs the bloom filter already
/// holds are skipped; the rest are inserted before dispatch, in task order,
/// so the filter state does not depend on scheduling. Tasks sharing a URL
/// share its outcome. Results come back in task order.
pub fn fetch_images(
    tasks: Vec<FetchTask>,
    transport: &dyn Transport,
    bloom: &mut BloomFilter,
    cfg: &FetchConfig,
) -> (Vec<(FetchTask, FetchOutcome)>, FetchStats) {
    let mut stats = FetchStats { tasks: tasks.len(), ..Default::default() };
    let mut slot_of: HashMap<String, Option<usize>> = HashMap::new();
    let mut unique: Vec<String> = Vec::new();
    for t in &tasks {
        if slot_of.contains_key(&t.url) {
            continue;
        }
        if bloom.insert(&t.url) {
            stats.skipped_by_bloom += 1;
            slot_of.insert(t.url.clone(), None);
        } else {
            slot_of.insert(t.url.clone(), Some(unique.len()));
            unique.push(t.url.clone());
        }
    }
    stats.distinct_urls = slot_of.len();

    let limiter = HostLimiter {
        cap: cfg.per_host.max(1),
        inflight: Mutex::new(HashMap::new()),
        freed: Condvar::new(),
        peak: AtomicUsize::new(0),
    };
    let requests = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<(u32, FetchOutcome)>>> = unique.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1).min(unique.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(url) = unique.get(i) else { break };
                let host = url::Url::parse(url).ok().and_then(|u| u.host_str().map(String::from)).unwrap_or_default();
                limiter.acquire(&host);
                let r = fetch_one(url, transport, cfg, &requests);
                limiter.release(&host);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    stats.requests = requests.into_inner();
    stats.peak_per_host = limiter.peak.into_inner();
    let results: Vec<(u32, FetchOutcome)> =
        results.into_iter().map(|m| m.into_inner().expect("result slot").expect("every url fetched")).collect();

    let out = tasks
        .into_iter()
        .map(|mut t| match slot_of[&t.url] {
            None => {
                t.status = TaskStatus::Skipped;
                (t, Err(FetchFailure::AlreadySeen))
            }
            Some(i) => {
                let (attempts, outcome) = &results[i];
                t.attempts = *attempts;
                t.status = if outcome.is_ok() { TaskStatus::Done } else { TaskStatus::Failed };
                (t, outcome.clone())
            }
        })
        .collect();
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Scripted {
        calls: Mutex<HashMap<String, u32>>,
        transient_first: u32,
        concurrent: AtomicU32,
    }

    impl Scripted {
        fn new(transient_first: u32) -> Self {
            Self { calls: Mutex::new(HashMap::new()), transient_first, concurrent: AtomicU32::new(0) }
        }

        fn calls(&self, url: &str) -> u32 {
            self.calls.lock().unwrap().get(url).copied().unwrap_or(0)
        }
    }

    impl Transport for Scripted {
        fn request(&self, url: &str) -> Result<Response, TransportError> {
            self.concurrent.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(2));
            self.concurrent.fetch_sub(1, Ordering::SeqCst);
            let n = {
                let mut c = self.calls.lock().unwrap();
                let n = c.entry(url.to_string()).or_default();
                *n += 1;
                *n
            };
            if url.contains("missing") {
                return Err(TransportError::NotFound);
            }
            if url.contains("huge") {
                return Ok(Response { bytes: vec![0; 64], content_type: None });
            }
            if n <= self.transient_first {
                return Err(TransportError::Transient("timeout".into()));
            }
            Ok(Response { bytes: url.as_bytes().to_vec(), content_type: None })
        }
    }

    fn tasks(urls: &[&str]) -> Vec<FetchTask> {
        urls.iter().map(|u| FetchTask::new(u, "doc").unwrap()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_url("HTTP://Example.COM:80/a/B.png?x=1#frag").unwrap(), "http://example.com/a/B.png?x=1");
        assert_eq!(normalize_url("https://e.com:443/x").unwrap(), "https://e.com/x");
        assert_eq!(normalize_url("https://e.com:8443/x").unwrap(), "https://e.com:8443/x");
        assert!(normalize_url("not a url").is_err());
    }

    #[test]
    fn fragments_share_one_fetch() {
        let t = Scripted::new(0);
        let mut bloom = BloomFilter::new(4096, 4);
        let (out, stats) =
            fetch_images(tasks(&["https://e.com/a.png#1", "https://e.com/a.png#2"]), &t, &mut bloom, &FetchConfig::default());
        assert_eq!(t.calls("https://e.com/a.png"), 1);
        assert_eq!(stats.requests, 1);
        assert!(out.iter().all(|(_, o)| o.as_ref().unwrap().bytes == b"https://e.com/a.png"));
    }

    #[test]
    fn bloom_skips_across_batches() {
        let t = Scripted::new(0);
        let mut bloom = BloomFilter::new(4096, 4);
        let cfg = FetchConfig::default();
        fetch_images(tasks(&["https://e.com/a.png"]), &t, &mut bloom, &cfg);
        let (out, stats) = fetch_images(tasks(&["https://e.com/a.png", "https://e.com/b.png"]), &t, &mut bloom, &cfg);
        assert_eq!(stats.skipped_by_bloom, 1);
        assert_eq!(out[0].1, Err(FetchFailure::AlreadySeen));
        assert_eq!(out[0].0.status, TaskStatus::Skipped);
        assert_eq!(t.calls("https://e.com/a.png"), 1);
    }

    #[test]
    fn retry_policy() {
        let t = Scripted::new(2);
        let mut bloom = BloomFilter::new(4096, 4);
        let (out, _) = fetch_images(tasks(&["https://e.com/a.png", "https://e.com/missing.png"]), &t, &mut bloom, &FetchConfig::default());
        assert_eq!(out[0].0.attempts, 3);
        assert!(out[0].1.is_ok());
        assert_eq!(out[1].0.attempts, 1);
        assert_eq!(out[1].1, Err(FetchFailure::NotFound));

        let t = Scripted::new(5);
        let (out, _) =
            fetch_images(tasks(&["https://e.com/c.png"]), &t, &mut BloomFilter::new(4096, 4), &FetchConfig::default());
        assert_eq!(out[0].0.attempts, 3);
        assert!(matches!(out[0].1, Err(FetchFailure::Transient(_))));
        assert_eq!(out[0].0.status, TaskStatus::Failed);
    }

    #[test]
    fn oversized_body_is_a_failure() {
        let t = Scripted::new(0);
        let cfg = FetchConfig { max_body_bytes: 10, ..Default::default() };
        let (out, _) = fetch_images(tasks(&["https://e.com/huge.png"]), &t, &mut BloomFilter::new(4096, 4), &cfg);
        assert_eq!(out[0].1, Err(FetchFailure::TooLarge(64)));
    }

    #[test]
    fn per_host_cap() {
        let t = Scripted::new(0);
        let urls: Vec<String> = (0..24).map(|i| format!("https://one.example/{i}.png")).collect();
        let refs: Vec<&str> = urls.iter().map(String::as_str).collect();
        let cfg = FetchConfig { per_host: 2, workers: 8, ..Default::default() };
        let (out, stats) = fetch_images(tasks(&refs), &t, &mut BloomFilter::new(1 << 16, 4), &cfg);
        assert_eq!(out.len(), 24);
        assert!(stats.peak_per_host <= 2, "peak {}", stats.peak_per_host);
    }

    #[test]
    fn file_transport() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("img.example/a")).unwrap();
        std::fs::write(dir.path().join("img.example/a/x.pgm"), b"P5\n1 1\n255\n\x07").unwrap();
        let t = FileTransport::new(dir.path());
        assert_eq!(t.request("https://img.example/a/x.pgm").unwrap().bytes.len(), 12);
        assert_eq!(t.request("https://img.example/a/y.pgm"), Err(TransportError::NotFound));
        assert_eq!(t.path_for("https://img.example/../../etc/passwd").unwrap(), dir.path().join("img.example/etc/passwd"));
    }
}
