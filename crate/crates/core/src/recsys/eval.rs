use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::data::Split;

/// nDCG of a single relevant item at 1-based `rank`.
pub fn ndcg_at_rank(rank: usize, cutoff: usize) -> f64 {
    if rank == 0 || rank > cutoff {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgReport {
    pub ndcg: f64,
    pub hit_rate: f64,
    pub users: usize,
    pub num_negatives: usize,
    pub cutoff: usize,
}

/// Sampled leave-one-out nDCG: each held-out item is ranked against
/// `num_negatives` items the user never interacted with. Items scoring equal
/// to the held-out item rank ahead of it.
pub fn evaluate_ndcg(
    params: &ModelParams,
    split: &Split,
    num_negatives: usize,
    cutoff: usize,
    seed: u64,
) -> NdcgReport {
    let histories = split.train_histories();
    let users: Vec<(&String, &String)> = split.test.iter().collect();
    let n_items = params.items.len();
    let per_user: Vec<Option<(f64, bool)>> = users
        .par_iter()
        .map(|(user, held)| {
            let u = params.users.get(user)?;
            let target = params.items.get(held)?;
            let mut seen: HashSet<usize> = histories
                .get(*user)
                .map(|h| h.iter().filter_map(|i| params.items.get(i)).collect())
                .unwrap_or_default();
            seen.insert(target);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u as u64);
            let pool: Vec<usize> = (0..n_items).filter(|i| !seen.contains(i)).collect();
            let negatives: Vec<usize> = if pool.len() <= num_negatives {
                pool
            } else {
                rand::seq::index::sample(&mut rng, pool.len(), num_negatives).into_iter().map(|j| pool[j]).collect()
            };
            let s = params.logit(u, target);
            let rank = 1 + negatives.iter().filter(|&&j| params.logit(u, j) >= s).count();
            Some((ndcg_at_rank(rank, cutoff), rank <= cutoff))
        })
        .collect();
    let scored: Vec<(f64, bool)> = per_user.into_iter().flatten().collect();
    let n = scored.len();
    let (sum, hits) = scored.iter().fold((0.0, 0usize), |(s, h), (g, hit)| (s + g, h + usize::from(*hit)));
    NdcgReport {
        ndcg: if n > 0 { sum / n as f64 } else { 0.0 },
        hit_rate: if n > 0 { hits as f64 / n as f64 } else { 0.0 },
        users: n,
        num_negatives,
        cutoff,
    }
}
