//! Interaction ingestion, k-core filtering, popularity, leave-one-out
//! splitting and niche/blockbuster cohort selection.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::atomic_write;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no valid rows ({malformed} malformed)")]
    NoValidRows { path: PathBuf, malformed: usize },
    #[error("{k}-core filtering removed every interaction; dataset too sparse")]
    EmptyCore { k: usize },
    #[error("user {0} has fewer than 2 distinct interactions")]
    UserTooShort(String),
    #[error("empty training set")]
    EmptyTrain,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

/// One user–item event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    #[serde(default)]
    pub rating: Option<f64>,
    pub timestamp: u64,
}

/// Textual item metadata used to render profile prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum InteractionFormat {
    /// Tab separated.
    Tsv,
    /// Comma separated.
    Csv,
    /// `::` separated, as in the MovieLens `ratings.dat` dumps.
    MovieLens,
}

impl InteractionFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => InteractionFormat::Csv,
            Some("dat") => InteractionFormat::MovieLens,
            _ => InteractionFormat::Tsv,
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            InteractionFormat::Tsv => line.split('\t').collect(),
            InteractionFormat::Csv => line.split(',').collect(),
            InteractionFormat::MovieLens => line.split("::").collect(),
        }
    }
}

/// Result of ingesting an interaction file.
#[derive(Debug, Clone)]
pub struct LoadReport {
    /// Deduplicated, sorted by `(timestamp, user_id, item_id)`.
    pub interactions: Vec<Interaction>,
    pub malformed: usize,
    pub duplicates: usize,
}

fn parse_row(fields: &[&str]) -> Option<Interaction> {
    let fields: Vec<&str> = fields.iter().map(|f| f.trim()).collect();
    let (user, item, rating, ts) = match fields.as_slice() {
        [u, i, t] => (*u, *i, None, *t),
        [u, i, r, t] => {
            let rating = if r.is_empty() { None } else { Some(r.parse::<f64>().ok().filter(|x| x.is_finite())?) };
            (*u, *i, rating, *t)
        }
        _ => return None,
    };
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let timestamp = ts.parse::<u64>().ok()?;
    Some(Interaction { user_id: user.to_string(), item_id: item.to_string(), rating, timestamp })
}

fn sort_key(a: &Interaction, b: &Interaction) -> std::cmp::Ordering {
    a.timestamp.cmp(&b.timestamp).then_with(|| a.user_id.cmp(&b.user_id)).then_with(|| a.item_id.cmp(&b.item_id))
}

/// Parses interaction rows from text. Rows are `user, item, [rating,] timestamp`.
pub fn parse_interactions(text: &str, format: InteractionFormat) -> LoadReport {
    let mut malformed = 0;
    let mut duplicates = 0;
    let mut seen: HashSet<(String, String, u64)> = HashSet::new();
    let mut interactions = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(&format.split(line)) {
            Some(row) => {
                let key = (row.user_id.clone(), row.item_id.clone(), row.timestamp);
                if seen.insert(key) {
                    interactions.push(row);
                } else {
                    duplicates += 1;
                }
            }
            None => malformed += 1,
        }
    }
    interactions.sort_by(sort_key);
    LoadReport { interactions, malformed, duplicates }
}

pub fn load_interactions(path: &Path, format: InteractionFormat) -> Result<LoadReport, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    // MovieLens dumps are latin-1; lossy decoding keeps ids intact.
    let text = String::from_utf8_lossy(&bytes);
    let report = parse_interactions(&text, format);
    if report.malformed > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), report.malformed);
    }
    if report.duplicates > 0 {
        log::info!("{}: dropped {} duplicate rows", path.display(), report.duplicates);
    }
    if report.interactions.is_empty() {
        return Err(DataError::NoValidRows { path: path.to_path_buf(), malformed: report.malformed });
    }
    Ok(report)
}

/// Writes interactions as `user\titem\trating\ttimestamp` lines.
pub fn write_interactions(path: &Path, interactions: &[Interaction]) -> Result<(), DataError> {
    let mut out = String::new();
    for it in interactions {
        let rating = it.rating.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", it.user_id, it.item_id, rating, it.timestamp));
    }
    atomic_write(path, out.as_bytes()).map_err(|e| DataError::io(path, e))
}

/// Loads one-JSON-object-per-line item metadata. Rows with an empty title or
/// a repeated id are skipped with a warning.
pub fn load_item_meta(path: &Path) -> Result<BTreeMap<String, ItemMeta>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut malformed = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<ItemMeta>(line) {
            Ok(meta) if !meta.title.trim().is_empty() && !out.contains_key(&meta.item_id) => {
                out.insert(meta.item_id.clone(), meta);
            }
            _ => malformed += 1,
        }
    }
    if malformed > 0 {
        log::warn!("{}: skipped {malformed} metadata rows", path.display());
    }
    if out.is_empty() {
        return Err(DataError::NoValidRows { path: path.to_path_buf(), malformed });
    }
    Ok(out)
}

pub fn write_item_meta(path: &Path, items: &BTreeMap<String, ItemMeta>) -> Result<(), DataError> {
    let records: Vec<&ItemMeta> = items.values().collect();
    crate::util::write_jsonl(path, &records).map_err(|e| DataError::io(path, e))
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every survivor meets the threshold.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Result<Vec<Interaction>, DataError> {
    if k == 0 {
        return Err(DataError::InvalidParam("k must be at least 1".into()));
    }
    let mut rows: Vec<Interaction> = interactions.to_vec();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &rows {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let keep: Vec<bool> =
            rows.iter().map(|r| users[r.user_id.as_str()] >= k && items[r.item_id.as_str()] >= k).collect();
        if keep.iter().all(|&x| x) {
            break;
        }
        let mut flags = keep.into_iter();
        rows.retain(|_| flags.next().unwrap_or(false));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyCore { k });
    }
    Ok(rows)
}

/// Per-user item lists in timestamp order, first occurrence kept.
pub fn user_histories(interactions: &[Interaction]) -> BTreeMap<String, Vec<String>> {
    let mut sorted: Vec<&Interaction> = interactions.iter().collect();
    sorted.sort_by(|a, b| sort_key(a, b));
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for it in sorted {
        if seen.insert((&it.user_id, &it.item_id)) {
            out.entry(it.user_id.clone()).or_default().push(it.item_id.clone());
        }
    }
    out
}

/// Global item popularity: the fraction of training users who interacted
/// with each item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityTable {
    pub values: BTreeMap<String, f64>,
    pub provenance: String,
}

impl PopularityTable {
    pub fn get(&self, item_id: &str) -> Option<f64> {
        self.values.get(item_id).copied()
    }

    /// Popularity of an item, 0 for items never seen in training.
    pub fn get_or_zero(&self, item_id: &str) -> f64 {
        self.get(item_id).unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.values().copied().fold(0.0, f64::max)
    }

    /// The `ceil(head_frac * |items|)` most popular items, ties broken by
    /// smaller item id.
    pub fn head_items(&self, head_frac: f64) -> BTreeSet<String> {
        let mut ranked: Vec<(&String, f64)> = self.values.iter().map(|(k, v)| (k, *v)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let n = ((head_frac * ranked.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        ranked.into_iter().take(n).map(|(k, _)| k.clone()).collect()
    }

    pub fn mean_of<'a, I: IntoIterator<Item = &'a String>>(&self, items: I) -> Option<f64> {
        let (sum, n) = items.into_iter().fold((0.0, 0usize), |(s, n), i| (s + self.get_or_zero(i), n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// `item_id\tpopularity` lines, preceded by a `# provenance` comment.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# provenance: {}\n", self.provenance);
        for (k, v) in &self.values {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), DataError> {
        atomic_write(path, self.to_tsv().as_bytes()).map_err(|e| DataError::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut values = BTreeMap::new();
        let mut provenance = String::new();
        let mut malformed = 0;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# provenance:") {
                provenance = rest.trim().to_string();
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next().and_then(|v| v.trim().parse::<f64>().ok())) {
                (Some(k), Some(v)) if (0.0..=1.0).contains(&v) => {
                    values.insert(k.to_string(), v);
                }
                _ => malformed += 1,
            }
        }
        if values.is_empty() {
            return Err(DataError::NoValidRows { path: path.to_path_buf(), malformed });
        }
        Ok(Self { values, provenance })
    }
}

pub fn compute_popularity(train: &[Interaction], provenance: &str) -> Result<PopularityTable, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptyTrain);
    }
    let users: HashSet<&str> = train.iter().map(|r| r.user_id.as_str()).collect();
    let pairs: HashSet<(&str, &str)> = train.iter().map(|r| (r.user_id.as_str(), r.item_id.as_str())).collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, item) in pairs {
        *counts.entry(item.to_string()).or_default() += 1;
    }
    let n = users.len() as f64;
    Ok(PopularityTable {
        values: counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        provenance: provenance.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Interaction>,
    /// user id → held-out item id.
    pub test: BTreeMap<String, String>,
}

impl Split {
    pub fn train_histories(&self) -> BTreeMap<String, Vec<String>> {
        user_histories(&self.train)
    }

    pub fn write_test(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for (u, i) in &self.test {
            out.push_str(&format!("{u}\t{i}\n"));
        }
        atomic_write(path, out.as_bytes()).map_err(|e| DataError::io(path, e))
    }

    pub fn read_test(path: &Path) -> Result<BTreeMap<String, String>, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Ok(text
            .lines()
            .filter_map(|l| {
                let mut p = l.split('\t');
                Some((p.next()?.to_string(), p.next()?.to_string()))
            })
            .collect())
    }
}

/// Holds out each user's latest interaction. Repeated `(user, item)` events
/// are first collapsed to their latest occurrence so a held-out item never
/// also appears in that user's training rows.
pub fn leave_one_out_split(interactions: &[Interaction]) -> Result<Split, DataError> {
    let mut latest: BTreeMap<(&str, &str), &Interaction> = BTreeMap::new();
    for it in interactions {
        let key = (it.user_id.as_str(), it.item_id.as_str());
        match latest.get(&key) {
            Some(prev) if prev.timestamp >= it.timestamp => {}
            _ => {
                latest.insert(key, it);
            }
        }
    }
    let mut by_user: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
    for it in latest.values() {
        by_user.entry(&it.user_id).or_default().push(it);
    }
    let mut train = Vec::new();
    let mut test = BTreeMap::new();
    for (user, rows) in by_user {
        if rows.len() < 2 {
            return Err(DataError::UserTooShort(user.to_string()));
        }
        let held = rows
            .iter()
            .max_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id)))
            .expect("non-empty");
        test.insert(user.to_string(), held.item_id.clone());
        train.extend(rows.iter().filter(|r| r.item_id != held.item_id).map(|r| (*r).clone()));
    }
    train.sort_by(sort_key);
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortLabel {
    Niche,
    Blockbuster,
}

impl fmt::Display for CohortLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CohortLabel::Niche => "niche",
            CohortLabel::Blockbuster => "blockbuster",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub label: CohortLabel,
    /// Most extreme user first.
    pub user_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CohortParams {
    pub top_frac: f64,
    pub bottom_frac: f64,
    pub max_history: usize,
    pub per_group: usize,
    /// Fraction of the catalog, by popularity, counted as "popular".
    pub head_frac: f64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self { top_frac: 0.2, bottom_frac: 0.2, max_history: 100, per_group: 250, head_frac: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSelection {
    pub niche: Cohort,
    pub blockbuster: Cohort,
    /// Set when either cohort has fewer than `per_group` members.
    pub short: bool,
    /// Popular-item fraction of every scored user.
    pub scores: BTreeMap<String, f64>,
}

impl CohortSelection {
    pub fn cohorts(&self) -> [&Cohort; 2] {
        [&self.niche, &self.blockbuster]
    }

    /// All members, niche first.
    pub fn all_users(&self) -> Vec<(CohortLabel, String)> {
        self.cohorts().iter().flat_map(|c| c.user_ids.iter().map(move |u| (c.label, u.clone()))).collect()
    }
}

/// Fraction of each user's training history that falls in the popular head.
pub fn popular_fraction_scores(
    histories: &BTreeMap<String, Vec<String>>,
    head: &BTreeSet<String>,
) -> BTreeMap<String, f64> {
    histories
        .iter()
        .filter(|(_, h)| !h.is_empty())
        .map(|(u, h)| {
            let popular = h.iter().filter(|i| head.contains(*i)).count();
            (u.clone(), popular as f64 / h.len() as f64)
        })
        .collect()
}

/// Ranks users by popular-item fraction and keeps the most extreme
/// `per_group` users from the bottom and top fractions.
pub fn select_cohorts(
    train: &[Interaction],
    popularity: &PopularityTable,
    params: &CohortParams,
) -> Result<CohortSelection, DataError> {
    let CohortParams { top_frac, bottom_frac, max_history, per_group, head_frac } = *params;
    if !(top_frac > 0.0 && bottom_frac > 0.0 && top_frac + bottom_frac <= 1.0 + 1e-12) {
        return Err(DataError::InvalidParam(format!(
            "need 0 < top_frac, bottom_frac and top_frac + bottom_frac <= 1 (got {top_frac}, {bottom_frac})"
        )));
    }
    if !(0.0..=1.0).contains(&head_frac) {
        return Err(DataError::InvalidParam(format!("head_frac {head_frac} outside [0, 1]")));
    }
    let histories = user_histories(train);
    let head = popularity.head_items(head_frac);
    let scores = popular_fraction_scores(&histories, &head);

    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(u, s)| (u, *s)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = ranked.len();
    let n_bottom = ((bottom_frac * n as f64) + 1e-9).floor() as usize;
    let n_top = ((top_frac * n as f64) + 1e-9).floor() as usize;
    let fits = |u: &String| histories[u].len() <= max_history;

    let niche: Vec<String> =
        ranked[..n_bottom].iter().filter(|(u, _)| fits(u)).take(per_group).map(|(u, _)| (*u).clone()).collect();
    let mut top: Vec<(&String, f64)> = ranked[n - n_top..].to_vec();
    top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let blockbuster: Vec<String> =
        top.iter().filter(|(u, _)| fits(u)).take(per_group).map(|(u, _)| (*u).clone()).collect();

    let short = niche.len() < per_group || blockbuster.len() < per_group;
    if short {
        log::warn!(
            "cohort selection short: {} niche, {} blockbuster (wanted {per_group} each)",
            niche.len(),
            blockbuster.len()
        );
    }
    Ok(CohortSelection {
        niche: Cohort { label: CohortLabel::Niche, user_ids: niche },
        blockbuster: Cohort { label: CohortLabel::Blockbuster, user_ids: blockbuster },
        short,
        scores,
    })
}
