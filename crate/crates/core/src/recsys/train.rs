use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelParams, RecsysError, Vocabulary};
use crate::data::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            epochs: 20,
            negatives_per_positive: 4,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RecsysError> {
        let bad = |m: &str| Err(RecsysError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean log-loss over each epoch's sampled examples, before regularization.
    pub epoch_losses: Vec<f64>,
}

/// Per-example log-loss and its gradients with respect to the parameters the
/// example touches.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleGrad {
    pub loss: f64,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-log σ(x)` (label 1) or `-log(1 - σ(x))` (label 0).
pub fn log_loss(logit: f64, positive: bool) -> f64 {
    let z = if positive { -logit } else { logit };
    // softplus(z)
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn example_loss_and_grad(params: &ModelParams, u: usize, i: usize, positive: bool) -> ExampleGrad {
    let p = params.user_vec(u);
    let q = params.item_vec(i);
    let w = &params.output_weights;
    let logit = params.logit(u, i);
    let g = sigmoid(logit) - if positive { 1.0 } else { 0.0 };
    ExampleGrad {
        loss: log_loss(logit, positive),
        user: (0..params.dim).map(|k| g * w[k] * q[k]).collect(),
        item: (0..params.dim).map(|k| g * w[k] * p[k]).collect(),
        weights: (0..params.dim).map(|k| g * p[k] * q[k]).collect(),
        bias: g,
    }
}

#[derive(Default)]
struct BatchGrad {
    users: BTreeMap<usize, Vec<f64>>,
    items: BTreeMap<usize, Vec<f64>>,
    bias: BTreeMap<usize, f64>,
    weights: Vec<f64>,
}

fn add_into(dst: &mut Vec<f64>, src: &[f64]) {
    if dst.is_empty() {
        dst.extend_from_slice(src);
    } else {
        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
    }
}

/// Fits the model with pointwise log-loss over sampled negatives and plain
/// mini-batch SGD with L2 weight decay. Single-threaded and fully determined
/// by `config.seed`.
pub fn train(split: &Split, config: &TrainConfig) -> Result<(ModelParams, TrainReport), RecsysError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(RecsysError::EmptySplit);
    }
    let users = Vocabulary::new(split.train.iter().map(|r| r.user_id.clone()).chain(split.test.keys().cloned()));
    let items = Vocabulary::new(split.train.iter().map(|r| r.item_id.clone()).chain(split.test.values().cloned()));
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(users, items, dim, config.seed);
    for x in params.user_factors.iter_mut().chain(params.item_factors.iter_mut()) {
        *x = rng.gen_range(-0.05..0.05);
    }
    // Unit output weights: the model starts as a plain dot product, so factor
    // gradients are first-order in the factor scale.
    params.output_weights.iter_mut().for_each(|w| *w = 1.0);

    let mut positives: Vec<(usize, usize)> = split
        .train
        .iter()
        .map(|r| (params.users.get(&r.user_id).unwrap(), params.items.get(&r.item_id).unwrap()))
        .collect();
    positives.sort_unstable();
    positives.dedup();
    let mut seen: Vec<HashSet<usize>> = vec![HashSet::new(); params.users.len()];
    for &(u, i) in &positives {
        seen[u].insert(i);
    }
    let n_items = params.items.len();

    let mut report = TrainReport { epoch_losses: Vec::with_capacity(config.epochs) };
    let mut examples: Vec<(usize, usize, bool)> =
        Vec::with_capacity(positives.len() * (1 + config.negatives_per_positive));
    for epoch in 1..=config.epochs {
        examples.clear();
        for &(u, i) in &positives {
            examples.push((u, i, true));
            if seen[u].len() >= n_items {
                continue;
            }
            for _ in 0..config.negatives_per_positive {
                let neg = loop {
                    let j = rng.gen_range(0..n_items);
                    if !seen[u].contains(&j) {
                        break j;
                    }
                };
                examples.push((u, neg, false));
            }
        }
        examples.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in examples.chunks(config.batch_size) {
            let mut acc = BatchGrad { weights: vec![0.0; dim], ..Default::default() };
            for &(u, i, pos) in batch {
                let g = example_loss_and_grad(&params, u, i, pos);
                loss_sum += g.loss;
                add_into(acc.users.entry(u).or_default(), &g.user);
                add_into(acc.items.entry(i).or_default(), &g.item);
                *acc.bias.entry(i).or_default() += g.bias;
                acc.weights.iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
            }
            apply_step(&mut params, &acc, batch.len() as f64, config);
        }
        let mean = loss_sum / examples.len().max(1) as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(RecsysError::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: loss {mean:.5}");
        report.epoch_losses.push(mean);
    }
    Ok((params, report))
}

fn apply_step(params: &mut ModelParams, acc: &BatchGrad, n: f64, config: &TrainConfig) {
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    for (&u, g) in &acc.users {
        for (x, gx) in params.user_vec_mut(u).iter_mut().zip(g) {
            *x -= lr * (gx / n + wd * *x);
        }
    }
    for (&i, g) in &acc.items {
        for (x, gx) in params.item_vec_mut(i).iter_mut().zip(g) {
            *x -= lr * (gx / n + wd * *x);
        }
    }
    for (&i, g) in &acc.bias {
        let b = &mut params.item_bias[i];
        *b -= lr * (g / n + wd * *b);
    }
    for (x, gx) in params.output_weights.iter_mut().zip(&acc.weights) {
        *x -= lr * (gx / n + wd * *x);
    }
}
