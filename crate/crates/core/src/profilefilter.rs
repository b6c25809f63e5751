//! Profile-driven history filtering.
//!
//! A language model summarizes a user's history into a short textual
//! profile, which is embedded into a unit vector. For `n` rounds, every
//! remaining item is tentatively dropped, the profile is regenerated and
//! re-embedded, and the item whose absence moves the embedding furthest (in
//! cosine dissimilarity) from the current profile is discarded for good. The
//! winner's embedding becomes the current profile for the next round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::ItemMeta;
use crate::providers::{Embedder, GenerationRequest, ProviderError, ResponseCache, TextGenerator};
use crate::util::{bounded_map, sha256_hex};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("item {0} has no metadata")]
    MissingMetadata(String),
    #[error("cannot build a prompt from an empty history")]
    EmptyHistory,
    #[error("history of {history} items cannot lose {n} and keep {min_remaining}")]
    TooShort { history: usize, n: usize, min_remaining: usize },
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("provider failed after {completed_steps} completed step(s): {source}")]
    Provider {
        completed_steps: usize,
        partial: Box<FilterResult>,
        #[source]
        source: ProviderError,
    },
}

/// Vocabulary used to phrase the prompt for one item domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Movies,
    VideoGames,
}

impl Domain {
    pub fn plural(self) -> &'static str {
        match self {
            Domain::Movies => "movies",
            Domain::VideoGames => "video games",
        }
    }

    pub fn singular(self) -> &'static str {
        match self {
            Domain::Movies => "movie",
            Domain::VideoGames => "video game",
        }
    }

    /// Past-tense verb for consuming one item.
    pub fn verb(self) -> &'static str {
        match self {
            Domain::Movies => "watched",
            Domain::VideoGames => "played",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfilePrompt {
    pub domain_noun: String,
    /// Task instructions; sent as the system message.
    pub header: String,
    /// Sentence introducing the item list.
    pub intro: String,
    pub item_lines: Vec<String>,
    pub word_limit: usize,
}

impl ProfilePrompt {
    /// The user message: intro followed by one line per item.
    pub fn user_message(&self) -> String {
        let mut out = self.intro.clone();
        for line in &self.item_lines {
            out.push('\n');
            out.push_str(line);
        }
        out
    }

    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.header, self.user_message())
    }
}

pub const DEFAULT_WORD_LIMIT: usize = 300;

/// `Title - Cat1, Cat2 - Description`; empty segments are omitted.
pub fn item_line(item: &ItemMeta) -> String {
    let mut parts = vec![item.title.trim().to_string()];
    if !item.categories.is_empty() {
        parts.push(item.categories.join(", "));
    }
    let desc = item.description.trim();
    if !desc.is_empty() {
        parts.push(desc.to_string());
    }
    parts.join(" - ")
}

/// Renders the profile prompt; item lines keep the order of `items`.
pub fn build_prompt(items: &[ItemMeta], domain: Domain, word_limit: usize) -> Result<ProfilePrompt, FilterError> {
    if items.is_empty() {
        return Err(FilterError::EmptyHistory);
    }
    let header = format!(
        "Your task is to analyze a list of {plural} a user has interacted with and describe the profile \
         and the preferences of the user in less than {word_limit} words. Try to not be too broad \
         (e.g. mention too many general categories such as action or comedy). \
         Do not mention specific {singular} titles.",
        plural = domain.plural(),
        singular = domain.singular(),
    );
    Ok(ProfilePrompt {
        domain_noun: domain.plural().to_string(),
        header,
        intro: format!("The user has {} the following {}:", domain.verb(), domain.plural()),
        item_lines: items.iter().map(item_line).collect(),
        word_limit: word_limit.max(1),
    })
}

/// Order-independent digest of an item-id set.
pub fn history_key(item_ids: &[String]) -> String {
    let sorted: BTreeSet<&str> = item_ids.iter().map(String::as_str).collect();
    let joined: Vec<&str> = sorted.into_iter().collect();
    sha256_hex(joined.join("\n").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub history_key: String,
    pub text: String,
    pub embedding: Vec<f64>,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub user_id: String,
    /// Discarded items in removal order.
    pub removed: Vec<String>,
    pub step_dissimilarities: Vec<f64>,
    /// Remaining history in its original order.
    pub remaining_history: Vec<String>,
}

/// Generator, embedder and the cache shared by both.
#[derive(Clone, Copy)]
pub struct ProfileServices<'a> {
    pub generator: &'a dyn TextGenerator,
    pub embedder: &'a dyn Embedder,
    pub cache: &'a ResponseCache,
}

pub fn generate_profile(
    services: ProfileServices<'_>,
    prompt: &ProfilePrompt,
    items: &[ItemMeta],
    history_key: &str,
) -> Result<String, ProviderError> {
    let provider_id = services.generator.provider_id();
    let request = format!("{history_key}\n{}", sha256_hex(prompt.full_text().as_bytes()));
    let value = services.cache.get_or_compute(&provider_id, "profile", &request, || {
        let text = services.generator.generate(&GenerationRequest {
            system: prompt.header.clone(),
            user: prompt.user_message(),
            items: items.to_vec(),
        })?;
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok(Value::String(text))
    })?;
    value.as_str().map(str::to_string).ok_or_else(|| ProviderError::Malformed("cached profile is not a string".into()))
}

pub fn embed_profile(services: ProfileServices<'_>, text: &str) -> Result<Vec<f64>, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let provider_id = services.embedder.provider_id();
    let value = services.cache.get_or_compute(&provider_id, "embedding", text, || {
        let v = services.embedder.embed(text)?;
        Ok(serde_json::to_value(v).expect("finite floats serialize"))
    })?;
    serde_json::from_value(value).map_err(|e| ProviderError::Malformed(format!("cached embedding: {e}")))
}

/// `1 - a·b`, clamped to `[0, 2]`.
pub fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> Result<f64, FilterError> {
    if a.len() != b.len() {
        return Err(FilterError::DimMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Number of items to discard.
    pub n: usize,
    pub min_remaining: usize,
    pub domain: Domain,
    pub word_limit: usize,
    /// Candidates evaluated concurrently within one step.
    pub max_in_flight: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { n: 5, min_remaining: 2, domain: Domain::Movies, word_limit: DEFAULT_WORD_LIMIT, max_in_flight: 4 }
    }
}

fn lookup_items(history: &[String], metadata: &BTreeMap<String, ItemMeta>) -> Result<Vec<ItemMeta>, FilterError> {
    history.iter().map(|id| metadata.get(id).cloned().ok_or_else(|| FilterError::MissingMetadata(id.clone()))).collect()
}

/// Generates and embeds the profile of `history` (kept in the given order).
pub fn profile_of(
    user_id: &str,
    history: &[String],
    metadata: &BTreeMap<String, ItemMeta>,
    services: ProfileServices<'_>,
    cfg: &FilterConfig,
) -> Result<Result<UserProfile, ProviderError>, FilterError> {
    let items = lookup_items(history, metadata)?;
    let prompt = build_prompt(&items, cfg.domain, cfg.word_limit)?;
    let key = history_key(history);
    Ok((|| {
        let text = generate_profile(services, &prompt, &items, &key)?;
        let embedding = embed_profile(services, &text)?;
        Ok(UserProfile {
            user_id: user_id.to_string(),
            history_key: key.clone(),
            text,
            embedding,
            provider_id: services.generator.provider_id(),
        })
    })())
}

fn round_dissimilarity(d: f64) -> f64 {
    (d * 1e12).round() / 1e12
}

/// Greedy profile-shift filter over a timestamp-ordered history.
pub fn greedy_filter(
    user_id: &str,
    history: &[String],
    metadata: &BTreeMap<String, ItemMeta>,
    services: ProfileServices<'_>,
    cfg: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    if history.len() < cfg.n + cfg.min_remaining {
        return Err(FilterError::TooShort { history: history.len(), n: cfg.n, min_remaining: cfg.min_remaining });
    }
    let mut result = FilterResult {
        user_id: user_id.to_string(),
        removed: Vec::new(),
        step_dissimilarities: Vec::new(),
        remaining_history: history.to_vec(),
    };
    if cfg.n == 0 {
        return Ok(result);
    }
    lookup_items(history, metadata)?;

    let fail = |result: &FilterResult, source: ProviderError| FilterError::Provider {
        completed_steps: result.removed.len(),
        partial: Box::new(result.clone()),
        source,
    };

    let mut current = match profile_of(user_id, history, metadata, services, cfg)? {
        Ok(p) => p.embedding,
        Err(e) => return Err(fail(&result, e)),
    };

    for step in 0..cfg.n {
        let remaining = result.remaining_history.clone();
        let candidates: Vec<usize> = (0..remaining.len()).collect();
        let outcomes = bounded_map(&candidates, cfg.max_in_flight, |&skip| {
            let reduced: Vec<String> =
                remaining.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, id)| id.clone()).collect();
            profile_of(user_id, &reduced, metadata, services, cfg)
        });

        let mut best: Option<(f64, &String, Vec<f64>)> = None;
        for (idx, outcome) in outcomes.into_iter().enumerate() {
            let profile = match outcome? {
                Ok(p) => p,
                Err(e) => return Err(fail(&result, e)),
            };
            let d = round_dissimilarity(cosine_dissimilarity(&current, &profile.embedding)?);
            let id = &remaining[idx];
            let better = match &best {
                None => true,
                Some((bd, bid, _)) => d > *bd || (d == *bd && id < *bid),
            };
            if better {
                best = Some((d, id, profile.embedding));
            }
        }
        let (d, winner, embedding) = best.expect("at least one candidate");
        log::debug!("user {user_id} step {}: discard {winner} (dissimilarity {d:.6})", step + 1);
        let winner = winner.clone();
        result.remaining_history.retain(|id| *id != winner);
        result.removed.push(winner);
        result.step_dissimilarities.push(d);
        current = embedding;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{stub_embed, stub_profile, StubEmbedder, StubGenerator};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn meta(id: &str, title: &str, cats: &[&str], desc: &str) -> ItemMeta {
        ItemMeta {
            item_id: id.into(),
            title: title.into(),
            categories: cats.iter().map(|s| s.to_string()).collect(),
            description: desc.into(),
        }
    }

    struct Counting<G> {
        inner: G,
        calls: AtomicUsize,
    }

    impl<G: TextGenerator> TextGenerator for Counting<G> {
        fn provider_id(&self) -> String {
            self.inner.provider_id()
        }
        fn generate(&self, r: &GenerationRequest) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.generate(r)
        }
    }

    struct FailAfter {
        remaining: AtomicUsize,
    }

    impl TextGenerator for FailAfter {
        fn provider_id(&self) -> String {
            "fail-after".into()
        }
        fn generate(&self, r: &GenerationRequest) -> Result<String, ProviderError> {
            let left = self.remaining.fetch_sub(1, Ordering::SeqCst);
            if left == 0 {
                self.remaining.store(0, Ordering::SeqCst);
                return Err(ProviderError::Http { status: 503, attempts: 4 });
            }
            StubGenerator.generate(r)
        }
    }

    fn toy() -> (Vec<String>, BTreeMap<String, ItemMeta>) {
        let rows = [
            meta("a1", "Heat (1995)", &["Action"], "explosive cop chase"),
            meta("a2", "Speed (1994)", &["Action"], "explosive cop chase"),
            meta("a3", "Die Hard (1988)", &["Action"], "explosive cop chase"),
            meta("w1", "Unforgiven (1992)", &["Western"], "lonely gunslinger frontier"),
            meta("a4", "Face/Off (1997)", &["Action"], "explosive cop chase"),
        ];
        let history = rows.iter().map(|m| m.item_id.clone()).collect();
        let metadata = rows.into_iter().map(|m| (m.item_id.clone(), m)).collect();
        (history, metadata)
    }

    /// Independent replay of one greedy step: profile every candidate subset
    /// directly with the stubs and take the argmax.
    fn brute_step(
        remaining: &[String],
        metadata: &BTreeMap<String, ItemMeta>,
        current: &[f64],
    ) -> (String, f64, Vec<f64>) {
        let embed = |ids: Vec<&String>| {
            let items: Vec<ItemMeta> = ids.into_iter().map(|i| metadata[i].clone()).collect();
            stub_embed(&stub_profile(&items), 1024).unwrap()
        };
        let mut scored: Vec<(f64, String, Vec<f64>)> = remaining
            .iter()
            .map(|skip| {
                let e = embed(remaining.iter().filter(|i| *i != skip).collect());
                let dot: f64 = e.iter().zip(current).map(|(x, y)| x * y).sum();
                ((1.0 - dot), skip.clone(), e)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let (d, id, e) = scored.swap_remove(0);
        (id, d, e)
    }

    fn stub_services<'a>(g: &'a dyn TextGenerator, e: &'a StubEmbedder, c: &'a ResponseCache) -> ProfileServices<'a> {
        ProfileServices { generator: g, embedder: e, cache: c }
    }

    #[test]
    fn prompt_renders_template_and_lines() {
        let die_hard = meta("1", "Die Hard (1988)", &["Action", "Thriller"], "NYPD cop John...");
        let p = build_prompt(std::slice::from_ref(&die_hard), Domain::Movies, 300).unwrap();
        assert_eq!(p.item_lines, vec!["Die Hard (1988) - Action, Thriller - NYPD cop John..."]);
        assert!(p.header.starts_with("Your task is to analyze a list of movies a user has interacted with"));
        assert!(p.header.contains("in less than 300 words"));
        assert!(p.header.contains("Try to not be too broad"));
        assert!(p.header.ends_with("Do not mention specific movie titles."));
        assert!(p.user_message().starts_with("The user has watched the following movies:\nDie Hard (1988)"));

        let games = build_prompt(&[die_hard], Domain::VideoGames, 300).unwrap();
        assert!(games.header.contains("Do not mention specific video game titles."));
        assert_eq!(games.intro, "The user has played the following video games:");
    }

    #[test]
    fn missing_segments_are_omitted() {
        assert_eq!(item_line(&meta("1", "Solo", &[], "")), "Solo");
        assert_eq!(item_line(&meta("1", "Solo", &["Drama"], "  ")), "Solo - Drama");
        assert_eq!(item_line(&meta("1", "Solo", &[], "desc")), "Solo - desc");
        assert!(matches!(build_prompt(&[], Domain::Movies, 300), Err(FilterError::EmptyHistory)));
    }

    #[test]
    fn history_key_ignores_order() {
        let a = vec!["x".to_string(), "y".into(), "z".into()];
        let b = vec!["z".to_string(), "x".into(), "y".into()];
        assert_eq!(history_key(&a), history_key(&b));
        assert_ne!(history_key(&a), history_key(&a[..2]));
    }

    #[test]
    fn dissimilarity_cases() {
        assert_eq!(cosine_dissimilarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_dissimilarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(cosine_dissimilarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(cosine_dissimilarity(&[1.0], &[1.0, 0.0]), Err(FilterError::DimMismatch(1, 2))));
    }

    #[test]
    fn stub_profile_through_cache_lists_majority_first() {
        let ids: Vec<String> = (1..=4).map(|i| i.to_string()).collect();
        let md: BTreeMap<String, ItemMeta> = ids
            .iter()
            .map(|i| {
                let cat = if i == "2" { "Drama" } else { "Action" };
                (i.clone(), meta(i, i, &[cat], ""))
            })
            .collect();
        let cache = ResponseCache::in_memory();
        let e = StubEmbedder::default();
        let p = profile_of("u", &ids, &md, stub_services(&StubGenerator, &e, &cache), &FilterConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(p.text, "CATEGORIES:\nAction:3\nDrama:1\nTOKENS:\n");
        let norm: f64 = p.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_steps_is_identity() {
        let (h, md) = toy();
        let cache = ResponseCache::in_memory();
        let e = StubEmbedder::default();
        let cfg = FilterConfig { n: 0, ..Default::default() };
        let r = greedy_filter("u", &h, &md, stub_services(&StubGenerator, &e, &cache), &cfg).unwrap();
        assert!(r.removed.is_empty());
        assert_eq!(r.remaining_history, h);
        assert_eq!(cache.stats().requests, 0);
    }

    #[test]
    fn single_step_removes_the_out_of_character_item() {
        let (h, md) = toy();
        let cache = ResponseCache::in_memory();
        let e = StubEmbedder::default();
        let cfg = FilterConfig { n: 1, ..Default::default() };
        let r = greedy_filter("u", &h, &md, stub_services(&StubGenerator, &e, &cache), &cfg).unwrap();
        let full: Vec<ItemMeta> = h.iter().map(|i| md[i].clone()).collect();
        let e0 = stub_embed(&stub_profile(&full), 1024).unwrap();
        let (oracle, d, _) = brute_step(&h, &md, &e0);
        assert_eq!(oracle, "w1");
        assert_eq!(r.removed, vec!["w1".to_string()]);
        assert!((r.step_dissimilarities[0] - d).abs() < 1e-12);
        assert_eq!(r.remaining_history, vec!["a1", "a2", "a3", "a4"]);
    }

    #[test]
    fn two_steps_match_stepwise_brute_force() {
        let (h, md) = toy();
        let cache = ResponseCache::in_memory();
        let e = StubEmbedder::default();
        let cfg = FilterConfig { n: 2, ..Default::default() };
        let r = greedy_filter("u", &h, &md, stub_services(&StubGenerator, &e, &cache), &cfg).unwrap();

        let full: Vec<ItemMeta> = h.iter().map(|i| md[i].clone()).collect();
        let mut current = stub_embed(&stub_profile(&full), 1024).unwrap();
        let mut remaining = h.clone();
        let mut expected = Vec::new();
        for _ in 0..2 {
            let (id, _, emb) = brute_step(&remaining, &md, &current);
            remaining.retain(|x| *x != id);
            expected.push(id);
            current = emb;
        }
        assert_eq!(r.removed, expected);
        assert!(r.step_dissimilarities.iter().all(|d| (0.0..=2.0).contains(d)));
    }

    #[test]
    fn warm_cache_makes_no_calls_and_reproduces_result() {
        let (h, md) = toy();
        let dir = tempfile::tempdir().unwrap();
        let e = StubEmbedder::default();
        let cfg = FilterConfig { n: 2, max_in_flight: 3, ..Default::default() };

        let cold = Counting { inner: StubGenerator, calls: AtomicUsize::new(0) };
        let cache = ResponseCache::on_disk(dir.path());
        let first = greedy_filter("u", &h, &md, stub_services(&cold, &e, &cache), &cfg).unwrap();
        let calls = cold.calls.load(Ordering::SeqCst);
        assert!(calls <= cfg.n * h.len() + 1, "{calls} generator calls");

        let warm = Counting { inner: StubGenerator, calls: AtomicUsize::new(0) };
        let cache = ResponseCache::on_disk(dir.path());
        let second = greedy_filter("u", &h, &md, stub_services(&warm, &e, &cache), &cfg).unwrap();
        assert_eq!(warm.calls.load(Ordering::SeqCst), 0);
        assert_eq!(cache.stats().requests, 0);
        assert_eq!(first, second);
    }

    #[test]
    fn provider_failure_reports_partial_progress() {
        let (h, md) = toy();
        let cache = ResponseCache::in_memory();
        let e = StubEmbedder::default();
        // 1 initial profile + 5 candidates in step one, then fail in step two.
        let g = FailAfter { remaining: AtomicUsize::new(7) };
        let cfg = FilterConfig { n: 2, max_in_flight: 1, ..Default::default() };
        match greedy_filter("u", &h, &md, stub_services(&g, &e, &cache), &cfg) {
            Err(FilterError::Provider { completed_steps, partial, .. }) => {
                assert_eq!(completed_steps, 1);
                assert_eq!(partial.removed, vec!["w1".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precondition_on_history_length() {
        let (h, md) = toy();
        let cache = ResponseCache::in_memory();
        let e = StubEmbedder::default();
        let cfg = FilterConfig { n: 4, min_remaining: 2, ..Default::default() };
        assert!(matches!(
            greedy_filter("u", &h, &md, stub_services(&StubGenerator, &e, &cache), &cfg),
            Err(FilterError::TooShort { .. })
        ));
        let mut md2 = md.clone();
        md2.remove("a2");
        let cfg = FilterConfig { n: 1, ..Default::default() };
        assert!(matches!(
            greedy_filter("u", &h, &md2, stub_services(&StubGenerator, &e, &cache), &cfg),
            Err(FilterError::MissingMetadata(id)) if id == "a2"
        ));
    }

    #[test]
    fn deterministic_across_concurrency() {
        let (h, md) = toy();
        let e = StubEmbedder::default();
        let run = |bound| {
            let cache = ResponseCache::in_memory();
            let cfg = FilterConfig { n: 3, max_in_flight: bound, min_remaining: 1, ..Default::default() };
            greedy_filter("u", &h, &md, stub_services(&StubGenerator, &e, &cache), &cfg).unwrap()
        };
        let a = run(1);
        assert_eq!(a, run(4));
        let mut all: Vec<String> = a.removed.iter().chain(&a.remaining_history).cloned().collect();
        all.sort();
        let mut hs = h.clone();
        hs.sort();
        assert_eq!(all, hs);
    }
}
