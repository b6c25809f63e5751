//! Deterministic stand-ins for the language model and the embedder.
//!
//! The stub "profile" is a canonical histogram of the history's categories
//! plus its most frequent description tokens. The stub embedder is a signed
//! feature-hashing bag of tokens: each lowercased whitespace token is hashed
//! with 64-bit FNV-1a, lands in bucket `hash % dim`, and contributes `+w`
//! or `-w` depending on bit 63. A token of the form `name:N` (N a decimal
//! count, as emitted by the stub profile) contributes `name` with weight N;
//! any other token has weight 1.

use std::collections::BTreeMap;

use super::{normalize, Embedder, GenerationRequest, ProviderError, TextGenerator};
use crate::data::ItemMeta;

const TOP_TOKENS: usize = 10;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn ranked(counts: BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

fn description_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
}

/// Canonical profile text for a list of items; independent of input order.
pub fn stub_profile(items: &[ItemMeta]) -> String {
    let mut categories: BTreeMap<String, usize> = BTreeMap::new();
    let mut tokens: BTreeMap<String, usize> = BTreeMap::new();
    for item in items {
        for c in &item.categories {
            *categories.entry(c.clone()).or_default() += 1;
        }
        for t in description_tokens(&item.description) {
            *tokens.entry(t).or_default() += 1;
        }
    }
    let mut out = String::from("CATEGORIES:\n");
    for (name, n) in ranked(categories) {
        out.push_str(&format!("{name}:{n}\n"));
    }
    out.push_str("TOKENS:\n");
    for (tok, n) in ranked(tokens).into_iter().take(TOP_TOKENS) {
        out.push_str(&format!("{tok}:{n}\n"));
    }
    out
}

fn weighted_token(token: &str) -> (&str, f64) {
    if let Some((name, count)) = token.rsplit_once(':') {
        if !name.is_empty() && !count.is_empty() && count.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = count.parse::<u32>() {
                return (name, f64::from(n));
            }
        }
    }
    (token, 1.0)
}

pub fn stub_embed(text: &str, dim: usize) -> Result<Vec<f64>, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let mut v = vec![0.0; dim];
    for raw in text.split_whitespace() {
        let token = raw.to_lowercase();
        let (name, weight) = weighted_token(&token);
        let h = fnv1a64(name.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign * weight;
    }
    normalize(v)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

impl TextGenerator for StubGenerator {
    fn provider_id(&self) -> String {
        "stub-profile-v1".into()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        Ok(stub_profile(&request.items))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    pub dim: usize,
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(1024)
    }
}

impl Embedder for StubEmbedder {
    fn provider_id(&self) -> String {
        format!("stub-embed-fnv1a-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        stub_embed(text, self.dim)
    }
}
