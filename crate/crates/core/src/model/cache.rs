//! Content-addressed completion cache: one JSON record per file, named by
//! the hex cache key.
//!
//! The key hashes (model name, prompt bytes, temperature, max_tokens), so a
//! change to any of them misses. Records are written atomically (temp file +
//! rename) with writes serialized in-process; reads take no lock. A record
//! that fails to parse is treated as a miss and rewritten.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CompletionMeta, ModelError};

/// Hex SHA-256 over the canonical (model, prompt, temperature, max_tokens)
/// encoding. Fields are length- or width-delimited so distinct tuples never
/// collide in the encoding itself.
pub fn cache_key(model: &str, prompt: &str, temperature: f64, max_tokens: u32) -> String {
    let mut h = Sha256::new();
    h.update((model.len() as u64).to_le_bytes());
    h.update(model.as_bytes());
    h.update(temperature.to_bits().to_le_bytes());
    h.update(max_tokens.to_le_bytes());
    h.update(prompt.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One cached completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub cache_key: String,
    pub prompt: String,
    pub response: String,
    pub backend: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timestamp: u64,
}

/// A directory of completion records.
pub struct CompletionCache {
    dir: PathBuf,
    write_lock: Mutex<u64>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CompletionCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ModelError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| ModelError::CacheIo {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(0),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn lookup(&self, key: &str, prompt: &str) -> Option<String> {
        let path = self.record_path(key);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CompletionRecord>(&text) {
            Ok(record) if record.prompt == prompt => Some(record.response),
            Ok(_) => {
                log::warn!("cache key collision at {}; treating as miss", path.display());
                None
            }
            Err(e) => {
                log::warn!("corrupted cache record {}: {e}; rewriting", path.display());
                None
            }
        }
    }

    fn store(&self, record: &CompletionRecord) -> Result<(), ModelError> {
        let path = self.record_path(&record.cache_key);
        let io_err = |source: std::io::Error| ModelError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        let body = serde_json::to_vec_pretty(record)
            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
        let mut counter = self.write_lock.lock().unwrap();
        *counter += 1;
        let tmp = self
            .dir
            .join(format!(".tmp-{}-{}-{counter}", record.cache_key, std::process::id()));
        fs::write(&tmp, &body).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(())
    }
}

/// Returns the cached response for this (backend, prompt) if present,
/// otherwise completes through the backend and stores the record atomically.
pub fn cached_complete(
    cache: &CompletionCache,
    backend: &Backend,
    prompt: &str,
    meta: &CompletionMeta,
) -> Result<String, ModelError> {
    let (model, temperature, max_tokens) = backend.cache_identity();
    let key = cache_key(&model, prompt, temperature, max_tokens);
    if let Some(response) = cache.lookup(&key, prompt) {
        cache.hits.fetch_add(1, Ordering::SeqCst);
        return Ok(response);
    }
    cache.misses.fetch_add(1, Ordering::SeqCst);
    let response = backend.complete(prompt, meta)?;
    cache.store(&CompletionRecord {
        cache_key: key,
        prompt: prompt.to_string(),
        response: response.clone(),
        backend: backend.id(),
        temperature,
        max_tokens,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    })?;
    Ok(response)
}
