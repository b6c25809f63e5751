//! Generalized matrix factorization recommender.
//!
//! The logit for user `u` and item `i` is `w · (p_u ⊙ q_i) + b_i`, where `p_u`
//! and `q_i` are latent factor rows, `w` a learned output weight vector and
//! `b_i` an item bias. Items and users are indexed in lexicographic id order,
//! so "smaller index" and "smaller id" coincide for tie-breaking.

mod checkpoint;
mod eval;
mod train;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_model, save_model, ModelManifest};
pub use eval::{evaluate_ndcg, ndcg_at_rank, NdcgReport};
pub use train::{example_loss_and_grad, log_loss, sigmoid, train, ExampleGrad, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum RecsysError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("requested top-{k} but only {available} candidate items")]
    TooFewCandidates { k: usize, available: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty training split")]
    EmptySplit,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bijection between opaque string ids and dense indices, sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let ids: Vec<String> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Trained recommender parameters. Factor matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub users: Vocabulary,
    pub items: Vocabulary,
    pub dim: usize,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub rng_seed: u64,
}

/// Ranked recommendations for one user, highest logit first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user_id: String,
    pub items: Vec<(String, f64)>,
    pub k: usize,
}

impl ModelParams {
    /// Zero-initialized parameters over the given vocabularies.
    pub fn zeros(users: Vocabulary, items: Vocabulary, dim: usize, rng_seed: u64) -> Self {
        Self {
            user_factors: vec![0.0; users.len() * dim],
            item_factors: vec![0.0; items.len() * dim],
            output_weights: vec![0.0; dim],
            item_bias: vec![0.0; items.len()],
            users,
            items,
            dim,
            rng_seed,
        }
    }

    pub fn user_index(&self, user_id: &str) -> Result<usize, RecsysError> {
        self.users.get(user_id).ok_or_else(|| RecsysError::UnknownUser(user_id.to_string()))
    }

    pub fn item_index(&self, item_id: &str) -> Result<usize, RecsysError> {
        self.items.get(item_id).ok_or_else(|| RecsysError::UnknownItem(item_id.to_string()))
    }

    pub fn user_vec(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn user_vec_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_vec(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn item_vec_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    /// `w ⊙ q_i`: the direction along which the user vector moves the logit
    /// of item `i`.
    pub fn item_direction(&self, i: usize) -> Vec<f64> {
        self.output_weights.iter().zip(self.item_vec(i)).map(|(w, q)| w * q).collect()
    }

    /// Logit of item index `i` for an arbitrary user vector.
    pub fn logit_with(&self, user_vec: &[f64], i: usize) -> f64 {
        let q = self.item_vec(i);
        let mut s = self.item_bias[i];
        for k in 0..self.dim {
            s += self.output_weights[k] * user_vec[k] * q[k];
        }
        s
    }

    pub fn logit(&self, u: usize, i: usize) -> f64 {
        self.logit_with(self.user_vec(u), i)
    }

    pub fn score(&self, user_id: &str, item_id: &str) -> Result<f64, RecsysError> {
        Ok(self.logit(self.user_index(user_id)?, self.item_index(item_id)?))
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .chain(&self.output_weights)
            .chain(&self.item_bias)
            .all(|x| x.is_finite())
    }

    /// Top-`k` items for a given user vector, skipping excluded item indices.
    /// Ties go to the smaller item id.
    pub fn rank_with(
        &self,
        user_vec: &[f64],
        k: usize,
        exclude: &HashSet<usize>,
    ) -> Result<Vec<(usize, f64)>, RecsysError> {
        let mut scored: Vec<(usize, f64)> =
            (0..self.items.len()).filter(|i| !exclude.contains(i)).map(|i| (i, self.logit_with(user_vec, i))).collect();
        if k == 0 || scored.len() < k {
            return Err(RecsysError::TooFewCandidates { k, available: scored.len() });
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn top_k(&self, user_id: &str, k: usize, exclude: &HashSet<String>) -> Result<RankedList, RecsysError> {
        let u = self.user_index(user_id)?;
        let exclude: HashSet<usize> = exclude.iter().filter_map(|i| self.items.get(i)).collect();
        let ranked = self.rank_with(self.user_vec(u), k, &exclude)?;
        Ok(RankedList {
            user_id: user_id.to_string(),
            items: ranked.into_iter().map(|(i, s)| (self.items.id(i).to_string(), s)).collect(),
            k,
        })
    }
}
