//! Text-generation and embedding backends.
//!
//! Two implementations sit behind the same traits: a remote client speaking
//! the common `/v1/chat/completions` and `/v1/embeddings` JSON shapes, and
//! deterministic local stubs used in tests and offline runs.

mod cache;
mod remote;
mod stub;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ItemMeta;

pub use cache::{CacheStats, ResponseCache};
pub use remote::{chat_complete, embed_text, RemoteProvider};
pub use stub::{fnv1a64, stub_embed, stub_profile, StubEmbedder, StubGenerator};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("HTTP status {status} after {attempts} attempt(s)")]
    Http { status: u16, attempts: usize },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("response has no choices")]
    EmptyChoices,
    #[error("empty completion")]
    EmptyCompletion,
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("provider kind {0:?} does not support this operation")]
    WrongKind(ProviderKind),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Stub,
}

/// Connection settings for one backend. The API key itself is never stored
/// here; only the name of the environment variable holding it.
#[derive(Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_retries: usize,
    /// Base delay of the exponential backoff, doubled on each retry.
    pub backoff_base_ms: u64,
    pub api_key_env: Option<String>,
    /// Bound on concurrent in-flight remote requests.
    pub max_in_flight: usize,
    /// Output dimension of the stub embedder.
    pub stub_dim: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: "http://127.0.0.1:8080".into(),
            model_name: String::new(),
            temperature: 0.0,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_base_ms: 1000,
            api_key_env: None,
            max_in_flight: 4,
            stub_dim: 1024,
        }
    }
}

impl fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("kind", &self.kind)
            .field("endpoint", &self.endpoint)
            .field("model_name", &self.model_name)
            .field("temperature", &self.temperature)
            .field("timeout_s", &self.timeout_s)
            .field("max_retries", &self.max_retries)
            .field("api_key_env", &self.api_key_env)
            .finish_non_exhaustive()
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0 (got {})", self.temperature));
        }
        if !(self.timeout_s > 0.0) {
            return Err("timeout_s must be > 0".into());
        }
        if self.kind == ProviderKind::Stub && self.stub_dim == 0 {
            return Err("stub_dim must be >= 1".into());
        }
        Ok(())
    }
}

/// A profile-generation request: the rendered prompt for remote models and
/// the raw item metadata for the stub.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub system: String,
    pub user: String,
    pub items: Vec<ItemMeta>,
}

pub trait TextGenerator: Send + Sync {
    /// Stable identifier used in cache keys.
    fn provider_id(&self) -> String;
    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn provider_id(&self) -> String;
    /// Returns an L2-normalized embedding.
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// L2-normalizes `v`; a zero (or non-finite) norm is an error.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, ProviderError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(ProviderError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub type ProviderPair = (Arc<dyn TextGenerator>, Arc<dyn Embedder>);

/// Builds the generator and embedder named by two configs. Remote backends
/// share one in-flight bound.
pub fn build_providers(llm: &ProviderConfig, embedder: &ProviderConfig) -> Result<ProviderPair, ProviderError> {
    let semaphore = Arc::new(crate::util::Semaphore::new(llm.max_in_flight.max(embedder.max_in_flight)));
    let generator: Arc<dyn TextGenerator> = match llm.kind {
        ProviderKind::Stub => Arc::new(StubGenerator),
        ProviderKind::Remote => Arc::new(RemoteProvider::with_semaphore(llm.clone(), semaphore.clone())),
    };
    let embed: Arc<dyn Embedder> = match embedder.kind {
        ProviderKind::Stub => Arc::new(StubEmbedder::new(embedder.stub_dim)),
        ProviderKind::Remote => Arc::new(RemoteProvider::with_semaphore(embedder.clone(), semaphore)),
    };
    Ok((generator, embed))
}
