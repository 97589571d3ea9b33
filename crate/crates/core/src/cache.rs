//! Content-addressed disk cache for backend responses.
//!
//! One file per key under the cache directory; the key is the SHA-256 of the
//! canonical request. Writes go through a temp file and an atomic rename, so
//! concurrent writers of the same key are harmless (identical content,
//! last write wins).

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hash::sha256_hex;

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
}

/// Hit/miss counters; misses are actual backend calls.
#[derive(Debug, Default)]
pub struct CallStats {
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CallSnapshot {
    pub hits: u64,
    pub misses: u64,
}

impl CallStats {
    pub fn snapshot(&self) -> CallSnapshot {
        CallSnapshot {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn record_hit(&self) {
        self.hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_miss(&self) {
        self.misses.fetch_add(1, Ordering::Relaxed);
    }
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DiskCache { dir })
    }

    pub fn key_for<R: Serialize>(request: &R) -> String {
        let canonical = serde_json::to_string(request).expect("request serializes");
        sha256_hex(canonical.as_bytes())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<()> {
        static TMP_SEQ: AtomicU64 = AtomicU64::new(0);
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        let bytes = serde_json::to_vec(value)?;
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// Look up `request` in the cache; on a miss, call `f`, store, and return.
pub fn cached<R, T, F>(
    cache: &DiskCache,
    stats: &CallStats,
    request: &R,
    f: F,
) -> Result<T>
where
    R: Serialize,
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T>,
{
    let key = DiskCache::key_for(request);
    if let Some(v) = cache.get::<T>(&key)? {
        stats.record_hit();
        return Ok(v);
    }
    let value = f()?;
    cache.put(&key, &value)?;
    stats.record_miss();
    Ok(value)
}
