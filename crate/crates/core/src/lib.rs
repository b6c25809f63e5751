//! Counterfactual explanations for a latent-factor recommender, with
//! profile-based history filtering and popularity-bias metrics.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod influence;
pub mod metrics;
pub mod pipeline;
pub mod profilefilter;
pub mod providers;
pub mod recsys;
pub mod synth;
pub mod util;
