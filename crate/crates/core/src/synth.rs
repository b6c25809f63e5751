//! Synthetic datasets with planted structure.
//!
//! [`planted_catalog`] builds a genre catalog split into a popular head tier
//! and a long-tail tier, and three kinds of users:
//! * niche users whose core history is tail items of one genre, plus a few
//!   planted head items from other genres;
//! * blockbuster users whose core history is head items of one genre, plus a
//!   few planted tail items from other genres;
//! * regular users with a fixed share of head items, drawn across genres.
//!
//! Each user's last interaction is a core item, so leave-one-out never holds
//! out a planted item.
//!
//! [`latent_factor_interactions`] samples a larger implicit-feedback dataset
//! from a low-rank preference model with Zipf item popularity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, ItemMeta};

const GENRES: [&str; 8] = ["Action", "Drama", "Western", "SciFi", "Horror", "Comedy", "Romance", "Mystery"];

const VOCAB: [[&str; 8]; 8] = [
    ["explosion", "heist", "chase", "agent", "mercenary", "bomb", "commando", "showdown"],
    ["family", "grief", "marriage", "memory", "illness", "letters", "inheritance", "reunion"],
    ["gunslinger", "frontier", "ranch", "outlaw", "saloon", "sheriff", "cattle", "desert"],
    ["starship", "android", "galaxy", "colony", "wormhole", "alien", "cyborg", "orbit"],
    ["haunted", "ghost", "curse", "asylum", "demon", "cabin", "possession", "ritual"],
    ["wedding", "roommates", "prank", "mixup", "bachelor", "roadtrip", "slacker", "neighbors"],
    ["romance", "paris", "courtship", "heartbreak", "summer", "letters", "duet", "proposal"],
    ["detective", "murder", "alibi", "manor", "clue", "inspector", "poison", "suspect"],
];

const ADJECTIVES: [&str; 12] =
    ["Silent", "Broken", "Golden", "Last", "Hidden", "Burning", "Crimson", "Lonely", "Distant", "Wild", "Pale", "Iron"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub genres: usize,
    pub head_per_genre: usize,
    pub tail_per_genre: usize,
    pub niche_users: usize,
    pub blockbuster_users: usize,
    pub regular_users: usize,
    /// Core items per niche or blockbuster user.
    pub core_len: usize,
    /// Out-of-character items per niche or blockbuster user.
    pub planted: usize,
    pub regular_len: usize,
    /// Share of a regular user's items drawn from the head tier (any genre);
    /// the rest come from the tail tier (any genre).
    pub regular_head_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            genres: 4,
            head_per_genre: 5,
            tail_per_genre: 5,
            niche_users: 10,
            blockbuster_users: 10,
            regular_users: 30,
            core_len: 5,
            planted: 1,
            regular_len: 10,
            regular_head_share: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(2..=GENRES.len()).contains(&self.genres) {
            return Err(format!("genres must be in 2..={}", GENRES.len()));
        }
        if self.head_per_genre == 0 || self.tail_per_genre == 0 {
            return Err("each genre needs head and tail items".into());
        }
        if self.core_len == 0 || self.core_len > self.head_per_genre.min(self.tail_per_genre) {
            return Err("core_len must be in 1..=min(head_per_genre, tail_per_genre)".into());
        }
        if self.planted > (self.genres - 1) * self.head_per_genre.min(self.tail_per_genre) {
            return Err("planted exceeds the items available in other genres".into());
        }
        if !(0.0..=1.0).contains(&self.regular_head_share) {
            return Err("regular_head_share must be in [0, 1]".into());
        }
        let n_head = (self.regular_len as f64 * self.regular_head_share).round() as usize;
        if n_head > self.genres * self.head_per_genre || self.regular_len - n_head > self.genres * self.tail_per_genre {
            return Err("regular_len exceeds the catalog".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    Niche,
    Blockbuster,
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub interactions: Vec<Interaction>,
    pub items: BTreeMap<String, ItemMeta>,
    pub kinds: BTreeMap<String, UserKind>,
    /// Out-of-character items of niche and blockbuster users.
    pub planted: BTreeMap<String, BTreeSet<String>>,
}

fn item_id(idx: usize) -> String {
    format!("i{:04}", idx + 1)
}

fn user_id(idx: usize) -> String {
    format!("u{:04}", idx + 1)
}

struct Catalog {
    head: Vec<Vec<usize>>,
    tail: Vec<Vec<usize>>,
}

fn build_catalog(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Catalog, BTreeMap<String, ItemMeta>) {
    let per_genre = cfg.head_per_genre + cfg.tail_per_genre;
    let mut head = vec![Vec::new(); cfg.genres];
    let mut tail = vec![Vec::new(); cfg.genres];
    let mut items = BTreeMap::new();
    for g in 0..cfg.genres {
        for k in 0..per_genre {
            let idx = g * per_genre + k;
            if k < cfg.head_per_genre {
                head[g].push(idx);
            } else {
                tail[g].push(idx);
            }
            let words: Vec<&str> = VOCAB[g].choose_multiple(rng, 4).copied().collect();
            let noun = words[0];
            let mut title_noun = noun.to_string();
            title_noun[..1].make_ascii_uppercase();
            let title = format!(
                "{} {} ({})",
                ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())],
                title_noun,
                1970 + rng.gen_range(0..45)
            );
            let id = item_id(idx);
            items.insert(
                id.clone(),
                ItemMeta {
                    item_id: id,
                    title,
                    categories: vec![GENRES[g].to_string()],
                    // Shared per genre, so items of one genre have identical profiles.
                    description: format!("A story of {}.", VOCAB[g][..4].join(" and ")),
                },
            );
        }
    }
    (Catalog { head, tail }, items)
}

/// `count` distinct items from tiers of genres other than `own`.
fn pick_other_genres(tiers: &[Vec<usize>], own: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pool: Vec<usize> =
        tiers.iter().enumerate().filter(|(g, _)| *g != own).flat_map(|(_, items)| items.iter().copied()).collect();
    pool.choose_multiple(rng, count).copied().collect()
}

pub fn planted_catalog(cfg: &SynthConfig) -> Result<SynthDataset, String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (catalog, items) = build_catalog(cfg, &mut rng);
    let all_head: Vec<usize> = catalog.head.iter().flatten().copied().collect();
    let all_tail: Vec<usize> = catalog.tail.iter().flatten().copied().collect();

    let mut kinds_in_order = Vec::new();
    kinds_in_order.extend(std::iter::repeat_n(UserKind::Niche, cfg.niche_users));
    kinds_in_order.extend(std::iter::repeat_n(UserKind::Blockbuster, cfg.blockbuster_users));
    kinds_in_order.extend(std::iter::repeat_n(UserKind::Regular, cfg.regular_users));
    kinds_in_order.shuffle(&mut rng);

    let mut interactions = Vec::new();
    let mut kinds = BTreeMap::new();
    let mut planted = BTreeMap::new();
    for (u, kind) in kinds_in_order.into_iter().enumerate() {
        let uid = user_id(u);
        let genre = rng.gen_range(0..cfg.genres);
        let (core, extra): (Vec<usize>, Vec<usize>) = match kind {
            UserKind::Niche => (
                catalog.tail[genre].choose_multiple(&mut rng, cfg.core_len).copied().collect(),
                pick_other_genres(&catalog.head, genre, cfg.planted, &mut rng),
            ),
            UserKind::Blockbuster => (
                catalog.head[genre].choose_multiple(&mut rng, cfg.core_len).copied().collect(),
                pick_other_genres(&catalog.tail, genre, cfg.planted, &mut rng),
            ),
            UserKind::Regular => {
                let n_head = ((cfg.regular_len as f64) * cfg.regular_head_share).round() as usize;
                let mut v: Vec<usize> = all_head.choose_multiple(&mut rng, n_head).copied().collect();
                v.extend(all_tail.choose_multiple(&mut rng, cfg.regular_len - n_head).copied());
                v.shuffle(&mut rng);
                (v, Vec::new())
            }
        };
        if kind != UserKind::Regular {
            planted.insert(uid.clone(), extra.iter().map(|&i| item_id(i)).collect());
        }
        // Core items keep the final slot; planted items are interleaved before it.
        let (last, rest_core) = core.split_last().expect("core_len >= 1");
        let mut order: Vec<usize> = rest_core.iter().chain(&extra).copied().collect();
        order.shuffle(&mut rng);
        order.push(*last);
        let base = 1_000_000 + (u as u64) * 10_000;
        for (t, i) in order.into_iter().enumerate() {
            interactions.push(Interaction {
                user_id: uid.clone(),
                item_id: item_id(i),
                rating: None,
                timestamp: base + t as u64 * 60,
            });
        }
        kinds.insert(uid, kind);
    }
    interactions.sort_by(|a, b| (a.timestamp, &a.user_id, &a.item_id).cmp(&(b.timestamp, &b.user_id, &b.item_id)));
    Ok(SynthDataset { interactions, items, kinds, planted })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct LatentFactorConfig {
    pub users: usize,
    pub items: usize,
    /// Mean history length; lengths are log-normal and at least `min_history`.
    pub mean_history: f64,
    pub min_history: usize,
    pub dim: usize,
    /// Strength of the user-item affinity relative to item popularity.
    pub affinity: f64,
    /// Zipf exponent of item popularity.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for LatentFactorConfig {
    /// Roughly the shape of MovieLens 100K.
    fn default() -> Self {
        Self {
            users: 943,
            items: 1682,
            mean_history: 106.0,
            min_history: 20,
            dim: 8,
            affinity: 2.0,
            zipf: 0.9,
            seed: 0,
        }
    }
}

/// Samples histories without replacement with weights
/// `popularity(i) * exp(affinity * <x_u, y_i>)` (Gumbel top-k).
pub fn latent_factor_interactions(cfg: &LatentFactorConfig) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (cfg.dim as f64).sqrt();
    let gaussian = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).map(|x: f64| x * scale).collect()
    };
    let item_vecs: Vec<Vec<f64>> = (0..cfg.items).map(|_| gaussian(cfg.dim, &mut rng)).collect();
    let mut rank: Vec<usize> = (0..cfg.items).collect();
    rank.shuffle(&mut rng);
    let log_pop: Vec<f64> = rank.iter().map(|&r| -cfg.zipf * ((r + 1) as f64).ln()).collect();

    let sigma = 0.8f64;
    let mu = cfg.mean_history.max(1.0).ln() - sigma * sigma / 2.0;
    let lengths = LogNormal::new(mu, sigma).expect("valid log-normal");

    let mut out = Vec::new();
    for u in 0..cfg.users {
        let x = gaussian(cfg.dim, &mut rng);
        let len = (lengths.sample(&mut rng).round() as usize).clamp(cfg.min_history, cfg.items);
        let mut keyed: Vec<(f64, usize)> = (0..cfg.items)
            .map(|i| {
                let dot: f64 = x.iter().zip(&item_vecs[i]).map(|(a, b)| a * b).sum();
                let gumbel = -(-rng.gen::<f64>().max(f64::MIN_POSITIVE).ln()).ln();
                (log_pop[i] + cfg.affinity * dot * (cfg.dim as f64).sqrt() + gumbel, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = keyed.into_iter().take(len).map(|(_, i)| i).collect();
        chosen.shuffle(&mut rng);
        let base = 1_000_000 + (u as u64) * 100_000;
        for (t, i) in chosen.into_iter().enumerate() {
            out.push(Interaction {
                user_id: user_id(u),
                item_id: item_id(i),
                rating: None,
                timestamp: base + t as u64 * 60,
            });
        }
    }
    out
}
