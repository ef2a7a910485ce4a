//! Content-addressed response cache.
//!
//! Successful responses are stored as `<content digest>.json` under the cache
//! directory, so re-running the same configuration replays from disk instead
//! of paying for the call again. Writes go through a temp file and rename so
//! a crash never leaves a half-written entry; unreadable entries are treated
//! as misses.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ChatResponse;

/// Cached response body. Latency is not stored: a cache hit takes zero time
/// by definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub provider_id: String,
}

/// Directory of cached responses keyed by content digest.
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    /// Looks up a digest; any read or parse failure is a miss.
    pub fn get(&self, digest: &str) -> Option<CachedResponse> {
        let bytes = std::fs::read(self.entry_path(digest)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Stores a response under a digest. Failures are silently dropped — the
    /// cache is an optimization, never a correctness requirement.
    pub fn put(&self, digest: &str, response: &ChatResponse) {
        let entry = CachedResponse {
            text: response.text.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            provider_id: response.provider_id.clone(),
        };
        let Ok(body) = serde_json::to_vec_pretty(&entry) else {
            return;
        };
        if std::fs::create_dir_all(&self.dir).is_err() {
            return;
        }
        let tmp = self.dir.join(format!(".{digest}.tmp"));
        if std::fs::write(&tmp, body).is_ok() {
            let _ = std::fs::rename(&tmp, self.entry_path(digest));
        }
    }
}
