use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{BackendError, GenRequest, ScoreRequest, ScoreResult, ScoringBackend};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt cache entry {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Content-addressed on-disk cache: one JSON file per key, grouped by
/// namespace (`<root>/<namespace>/<sha256>.json`).
///
/// Readers never block each other. Writers are serialized per key, and each
/// write goes to a temporary file that is renamed into place, so a reader
/// sees either the old state (missing) or a complete record.
#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| CacheError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Hex SHA-256 of the parts, each length-prefixed so that part
    /// boundaries cannot be forged by concatenation.
    pub fn key(parts: &[&str]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn text_hash(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn path_for(&self, namespace: &str, key: &str) -> PathBuf {
        self.root.join(namespace).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, namespace: &str, key: &str) -> Result<Option<T>, CacheError> {
        let path = self.path_for(namespace, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| CacheError::Corrupt { path, source })
    }

    pub fn put<T: Serialize>(&self, namespace: &str, key: &str, value: &T) -> Result<(), CacheError> {
        let lock = self.key_lock(namespace, key);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.write_unlocked(namespace, key, value)
    }

    /// Returns the cached value or computes, stores and returns it. Concurrent
    /// callers for the same key compute it once.
    pub fn get_or_try_insert_with<T, E, F>(&self, namespace: &str, key: &str, compute: F) -> Result<T, E>
    where
        T: Serialize + DeserializeOwned,
        E: From<CacheError>,
        F: FnOnce() -> Result<T, E>,
    {
        if let Some(v) = self.get(namespace, key)? {
            return Ok(v);
        }
        let lock = self.key_lock(namespace, key);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(v) = self.get(namespace, key)? {
            return Ok(v);
        }
        let value = compute()?;
        self.write_unlocked(namespace, key, &value)?;
        Ok(value)
    }

    fn key_lock(&self, namespace: &str, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks
            .entry(format!("{namespace}/{key}"))
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    fn write_unlocked<T: Serialize>(&self, namespace: &str, key: &str, value: &T) -> Result<(), CacheError> {
        let path = self.path_for(namespace, key);
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CacheError::Io { path, source }
        };
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let bytes = serde_json::to_vec_pretty(value).expect("cache records serialize");
        let mut tmp = tempfile_in(dir).map_err(io_err(dir))?;
        tmp.1.write_all(&bytes).map_err(io_err(&tmp.0))?;
        tmp.1.sync_all().map_err(io_err(&tmp.0))?;
        drop(tmp.1);
        fs::rename(&tmp.0, &path).map_err(io_err(&path))?;
        Ok(())
    }
}

fn tempfile_in(dir: &Path) -> io::Result<(PathBuf, fs::File)> {
    static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    loop {
        let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// On-disk value for one scored pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub total_logprob: f64,
    pub token_count: usize,
    pub timestamp: u64,
}

/// Wraps a backend with a disk cache for `score_continuation`, keyed by
/// (model name, prompt hash, continuation hash). Generation passes through.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<DiskCache>,
}

impl<B: ScoringBackend> CachedBackend<B> {
    pub const NAMESPACE: &'static str = "score";

    pub fn new(inner: B, cache: Arc<DiskCache>) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &Arc<DiskCache> {
        &self.cache
    }

    pub fn score_key(model: &str, req: &ScoreRequest) -> String {
        DiskCache::key(&[
            model,
            &DiskCache::text_hash(&req.prompt_text),
            &DiskCache::text_hash(&req.continuation_text),
        ])
    }
}

impl<B: ScoringBackend> ScoringBackend for CachedBackend<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn score_continuation(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        let key = Self::score_key(self.inner.model_name(), req);
        let record: ScoreRecord = self.cache.get_or_try_insert_with(Self::NAMESPACE, &key, || {
            let r = self.inner.score_continuation(req)?;
            Ok::<_, BackendError>(ScoreRecord {
                total_logprob: r.total_logprob,
                token_count: r.token_count,
                timestamp: unix_now(),
            })
        })?;
        Ok(ScoreResult {
            total_logprob: record.total_logprob,
            token_count: record.token_count,
        })
    }

    fn generate(&self, req: &GenRequest, num_samples: usize) -> Result<Vec<String>, BackendError> {
        self.inner.generate(req, num_samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    #[test]
    fn cached_scores_skip_the_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(DiskCache::open(dir.path()).unwrap());
        let mock = MockBackend::builder()
            .token_logprobs("p", "c", &[-0.1, -0.7, -1.0 / 3.0])
            .build();
        let backend = CachedBackend::new(&mock, cache.clone());
        let req = ScoreRequest::new("p", "c").unwrap();
        let first = backend.score_continuation(&req).unwrap();
        let second = backend.score_continuation(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(mock.score_calls(), 1);

        // a fresh cache handle over the same directory reuses the file
        let again = CachedBackend::new(&mock, Arc::new(DiskCache::open(dir.path()).unwrap()));
        assert_eq!(again.score_continuation(&req).unwrap(), first);
        assert_eq!(mock.score_calls(), 1);

        let path = cache.path_for("score", &CachedBackend::<&MockBackend>::score_key("mock", &req));
        let record: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
        assert!(record.get("total_logprob").is_some());
        assert_eq!(record["token_count"], 3);
        assert!(record.get("timestamp").is_some());
    }

    #[test]
    fn key_depends_on_model_and_boundaries() {
        let req = ScoreRequest::new("ab", "c").unwrap();
        let other = ScoreRequest::new("a", "bc").unwrap();
        assert_ne!(
            CachedBackend::<MockBackend>::score_key("m", &req),
            CachedBackend::<MockBackend>::score_key("m", &other)
        );
        assert_ne!(
            CachedBackend::<MockBackend>::score_key("m1", &req),
            CachedBackend::<MockBackend>::score_key("m2", &req)
        );
        assert_ne!(DiskCache::key(&["ab", "c"]), DiskCache::key(&["a", "bc"]));
    }

    #[test]
    fn concurrent_callers_compute_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let v: u32 = cache
                        .get_or_try_insert_with("ns", "k", || {
                            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok::<_, CacheError>(7)
                        })
                        .unwrap();
                    assert_eq!(v, 7);
                });
            }
        });
        assert_eq!(calls.into_inner(), 1);
    }

    #[test]
    fn corrupt_entry_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        let path = cache.path_for("ns", "bad");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, b"{not json").unwrap();
        assert!(matches!(cache.get::<u32>("ns", "bad"), Err(CacheError::Corrupt { .. })));
        assert_eq!(cache.get::<u32>("ns", "missing").unwrap(), None);
    }
}
