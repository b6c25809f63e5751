//! Content-addressed response cache.
//!
//! Keys are `sha256(provider_id, namespace, request)`; each entry is one JSON
//! file written by rename so concurrent writers of the same key are safe.
//! Concurrent misses on one key are serialized, so the provider sees each
//! distinct request once and the request/hit counts do not depend on timing.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ProviderError;
use crate::util::{atomic_write, sha256_hex};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Calls that went to the provider.
    pub requests: u64,
    pub hits: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    provider_id: String,
    namespace: String,
    value: Value,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Value>>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    requests: AtomicU64,
    hits: AtomicU64,
}

impl ResponseCache {
    /// Cache persisted under `dir`.
    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), ..Default::default() }
    }

    /// Process-local cache.
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn key(provider_id: &str, namespace: &str, request: &str) -> String {
        let material = format!("{provider_id}\u{0}{namespace}\u{0}{request}");
        sha256_hex(material.as_bytes())
    }

    fn path_for(&self, namespace: &str, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(namespace).join(&key[..2]).join(format!("{key}.json")))
    }

    fn lookup(&self, namespace: &str, key: &str) -> Option<Value> {
        if let Some(v) = self.memory.lock().expect("cache poisoned").get(key) {
            return Some(v.clone());
        }
        let path = self.path_for(namespace, key)?;
        let bytes = std::fs::read(path).ok()?;
        let entry: Entry = serde_json::from_slice(&bytes).ok()?;
        self.memory.lock().expect("cache poisoned").insert(key.to_string(), entry.value.clone());
        Some(entry.value)
    }

    /// Returns the cached value or computes, stores and returns it.
    pub fn get_or_compute<F>(
        &self,
        provider_id: &str,
        namespace: &str,
        request: &str,
        compute: F,
    ) -> Result<Value, ProviderError>
    where
        F: FnOnce() -> Result<Value, ProviderError>,
    {
        let key = Self::key(provider_id, namespace, request);
        let key_lock = Arc::clone(self.key_locks.lock().expect("cache poisoned").entry(key.clone()).or_default());
        let _guard = key_lock.lock().expect("cache poisoned");
        if let Some(v) = self.lookup(namespace, &key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.requests.fetch_add(1, Ordering::Relaxed);
        let value = compute()?;
        if let Some(path) = self.path_for(namespace, &key) {
            let entry =
                Entry { provider_id: provider_id.to_string(), namespace: namespace.to_string(), value: value.clone() };
            atomic_write(&path, &serde_json::to_vec(&entry).expect("entry serializes"))?;
        }
        self.memory.lock().expect("cache poisoned").insert(key, value.clone());
        Ok(value)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats { requests: self.requests.load(Ordering::Relaxed), hits: self.hits.load(Ordering::Relaxed) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hit_skips_compute_and_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::on_disk(dir.path());
        let v = cache.get_or_compute("p", "gen", "req", || Ok(json!("text"))).unwrap();
        assert_eq!(v, json!("text"));
        let again = cache.get_or_compute("p", "gen", "req", || panic!("must not recompute")).unwrap();
        assert_eq!(again, v);
        assert_eq!(cache.stats(), CacheStats { requests: 1, hits: 1 });

        let fresh = ResponseCache::on_disk(dir.path());
        let warm = fresh.get_or_compute("p", "gen", "req", || panic!("must hit disk")).unwrap();
        assert_eq!(warm, v);
        assert_eq!(fresh.stats().requests, 0);
    }

    #[test]
    fn keys_separate_providers_and_namespaces() {
        let cache = ResponseCache::in_memory();
        cache.get_or_compute("a", "gen", "r", || Ok(json!(1))).unwrap();
        cache.get_or_compute("b", "gen", "r", || Ok(json!(2))).unwrap();
        cache.get_or_compute("a", "emb", "r", || Ok(json!(3))).unwrap();
        assert_eq!(cache.stats().requests, 3);
    }

    #[test]
    fn concurrent_misses_on_one_key_compute_once() {
        let cache = ResponseCache::in_memory();
        let calls = AtomicU64::new(0);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    cache
                        .get_or_compute("p", "gen", "same", || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok(json!("v"))
                        })
                        .unwrap()
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.stats(), CacheStats { requests: 1, hits: 7 });
    }

    #[test]
    fn failures_are_not_cached() {
        let cache = ResponseCache::in_memory();
        assert!(cache.get_or_compute("a", "gen", "r", || Err(ProviderError::EmptyCompletion)).is_err());
        assert_eq!(cache.get_or_compute("a", "gen", "r", || Ok(json!(1))).unwrap(), json!(1));
    }
}
