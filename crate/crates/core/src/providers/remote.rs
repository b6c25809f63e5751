use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{normalize, Embedder, GenerationRequest, ProviderConfig, ProviderError, TextGenerator};
use crate::util::Semaphore;

/// HTTP client for OpenAI-compatible inference servers.
pub struct RemoteProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    in_flight: Arc<Semaphore>,
    requests: AtomicU64,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("config", &self.config)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

enum Attempt {
    Done(Value),
    Retry(ProviderError),
    Fail(ProviderError),
}

impl RemoteProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let sem = Arc::new(Semaphore::new(config.max_in_flight));
        Self::with_semaphore(config, sem)
    }

    pub fn with_semaphore(config: ProviderConfig, in_flight: Arc<Semaphore>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = config.api_key_env.as_deref().and_then(|name| std::env::var(name).ok()).filter(|k| !k.is_empty());
        Self { config, agent, api_key, in_flight, requests: AtomicU64::new(0) }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Number of HTTP requests issued, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn send_once(&self, url: &str, body: &Value) -> Attempt {
        let _permit = self.in_flight.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    match resp.body_mut().read_json::<Value>() {
                        Ok(v) => Attempt::Done(v),
                        Err(e) => Attempt::Fail(ProviderError::Malformed(e.to_string())),
                    }
                } else if status == 429 || status >= 500 {
                    Attempt::Retry(ProviderError::Http { status, attempts: 0 })
                } else {
                    Attempt::Fail(ProviderError::Http { status, attempts: 0 })
                }
            }
            Err(ureq::Error::Timeout(_)) => Attempt::Retry(ProviderError::Timeout { attempts: 0 }),
            Err(ureq::Error::Json(e)) => Attempt::Fail(ProviderError::Malformed(e.to_string())),
            Err(e) => Attempt::Retry(ProviderError::Transport(e.to_string())),
        }
    }

    fn backoff(&self, retry: usize) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter: f64 = rand::thread_rng().gen_range(0.5..1.5);
        Duration::from_millis((base * jitter) as u64)
    }

    /// POSTs `body` to `path`, retrying 429/5xx/timeouts/transport failures
    /// with exponential backoff up to `max_retries` times.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = self.url(path);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let err = match self.send_once(&url, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => e,
                Attempt::Retry(e) if attempts <= self.config.max_retries => {
                    log::warn!("{path}: attempt {attempts} failed ({e}); retrying");
                    std::thread::sleep(self.backoff(attempts - 1));
                    continue;
                }
                Attempt::Retry(e) => e,
            };
            return Err(match err {
                ProviderError::Http { status, .. } => ProviderError::Http { status, attempts },
                ProviderError::Timeout { .. } => ProviderError::Timeout { attempts },
                other => other,
            });
        }
    }
}

/// Sends a system + user message pair and returns the first choice's text.
pub fn chat_complete(provider: &RemoteProvider, system: &str, user: &str) -> Result<String, ProviderError> {
    let cfg = provider.config();
    let mut messages = Vec::new();
    if !system.is_empty() {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": user}));
    let body = json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
    });
    let resp = provider.post_json("v1/chat/completions", &body)?;
    let choices = resp
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Malformed("missing choices".into()))?;
    let first = choices.first().ok_or(ProviderError::EmptyChoices)?;
    let content = first
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed("missing message.content".into()))?;
    if content.trim().is_empty() {
        return Err(ProviderError::EmptyCompletion);
    }
    Ok(content.to_string())
}

/// Embeds `text` remotely and L2-normalizes the result.
pub fn embed_text(provider: &RemoteProvider, text: &str) -> Result<Vec<f64>, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let body = json!({"model": provider.config().model_name, "input": text});
    let resp = provider.post_json("v1/embeddings", &body)?;
    let raw = resp
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Malformed("missing data[0].embedding".into()))?;
    let v: Vec<f64> = raw
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| ProviderError::Malformed("non-numeric embedding".into())))
        .collect::<Result<_, _>>()?;
    normalize(v)
}

impl TextGenerator for RemoteProvider {
    fn provider_id(&self) -> String {
        format!("remote:{}:{}:t{}", self.config.endpoint, self.config.model_name, self.config.temperature)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        chat_complete(self, &request.system, &request.user)
    }
}

impl Embedder for RemoteProvider {
    fn provider_id(&self) -> String {
        format!("remote-embed:{}:{}", self.config.endpoint, self.config.model_name)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        embed_text(self, text)
    }
}
