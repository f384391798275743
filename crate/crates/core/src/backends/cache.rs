//! Content-addressed on-disk response cache.
//!
//! The key is a SHA-256 over the capability, the request as canonical JSON
//! (object keys sorted), the inner backend's name and the engine version.
//! Each entry is one `<key>.json` file written via a temporary file and a
//! rename, so readers never see a partial entry.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::*;
use crate::ENGINE_VERSION;

/// Renders `value` as JSON with object keys in sorted order at every level.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// Cache key for a request.
pub fn cache_key(capability: &str, request: &Value, backend_name: &str) -> String {
    let mut h = Sha256::new();
    for part in [
        capability,
        &canonical_json(request),
        backend_name,
        ENGINE_VERSION,
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    capability: String,
    created_at: u64,
    response: Value,
}

/// Decorator that answers repeated requests from disk.
pub struct Cached<B> {
    inner: B,
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    upstream_calls: AtomicU64,
    tmp_counter: AtomicU64,
}

impl<B: Backend> Cached<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Cached {
            inner,
            dir,
            locks: Mutex::new(HashMap::new()),
            upstream_calls: AtomicU64::new(0),
            tmp_counter: AtomicU64::new(0),
        })
    }

    /// Number of requests forwarded to the inner backend.
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(key.to_string()).or_default().clone()
    }

    fn read_entry<Resp: DeserializeOwned>(path: &Path, key: &str) -> Option<Resp> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!(
                    "cache entry {} unreadable, recomputing: {e}",
                    path.display()
                );
                return None;
            }
        };
        let parsed = serde_json::from_slice::<CacheEntry>(&bytes)
            .map_err(|e| e.to_string())
            .and_then(|entry| {
                if entry.key != key {
                    return Err("key mismatch".to_string());
                }
                serde_json::from_value::<Resp>(entry.response).map_err(|e| e.to_string())
            });
        match parsed {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!(
                    "cache entry {} is corrupt, recomputing: {e}",
                    path.display()
                );
                None
            }
        }
    }

    fn write_entry(&self, path: &Path, entry: &CacheEntry) -> std::io::Result<()> {
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = self
            .dir
            .join(format!(".{}.{}.{n}.tmp", entry.key, std::process::id()));
        std::fs::write(
            &tmp,
            serde_json::to_vec(entry).expect("cache entries serialize"),
        )?;
        std::fs::rename(&tmp, path)
    }

    fn cached<Req, Resp>(
        &self,
        capability: &str,
        req: &Req,
        call: impl FnOnce(&Req) -> Result<Resp, BackendError>,
    ) -> Result<Resp, BackendError>
    where
        Req: Serialize,
        Resp: Serialize + DeserializeOwned,
    {
        let request = serde_json::to_value(req).expect("requests serialize");
        let key = cache_key(capability, &request, &self.inner.name());
        let lock = self.key_lock(&key);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.entry_path(&key);
        if let Some(hit) = Self::read_entry(&path, &key) {
            return Ok(hit);
        }
        self.upstream_calls.fetch_add(1, Ordering::SeqCst);
        let resp = call(req)?;
        let entry = CacheEntry {
            key,
            capability: capability.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            response: serde_json::to_value(&resp).expect("responses serialize"),
        };
        if let Err(e) = self.write_entry(&path, &entry) {
            log::warn!("could not write cache entry {}: {e}", path.display());
        }
        Ok(resp)
    }
}

impl<B: Backend> Backend for Cached<B> {
    fn describe(&self) -> Result<DescribeResponse, BackendError> {
        self.inner.describe()
    }
    fn complete(&self, req: &CompleteRequest) -> Result<CompleteResponse, BackendError> {
        self.cached("complete", req, |r| self.inner.complete(r))
    }
    fn attention_with_grad(
        &self,
        req: &AttentionRequest,
    ) -> Result<AttentionResponse, BackendError> {
        self.cached("attention", req, |r| self.inner.attention_with_grad(r))
    }
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse, BackendError> {
        self.cached("caption", req, |r| self.inner.caption(r))
    }
    fn itc_score(&self, req: &ItcRequest) -> Result<ItcResponse, BackendError> {
        self.cached("itc", req, |r| self.inner.itc_score(r))
    }
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, BackendError> {
        self.cached("detect", req, |r| self.inner.detect(r))
    }
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        self.cached("embed", req, |r| self.inner.embed(r))
    }
    fn name(&self) -> String {
        self.inner.name()
    }
}
