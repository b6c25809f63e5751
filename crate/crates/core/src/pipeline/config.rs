use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{CohortParams, InteractionFormat};
use crate::influence::{ExplainConfig, InfluenceConfig};
use crate::metrics::DEFAULT_BINS;
use crate::profilefilter::FilterConfig;
use crate::providers::ProviderConfig;
use crate::recsys::TrainConfig;
use crate::synth::{LatentFactorConfig, SynthConfig};

use super::{json_hash, paths};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Interaction file plus optional item metadata (JSONL).
    Files {
        interactions: PathBuf,
        #[serde(default)]
        items: Option<PathBuf>,
        /// Defaults to the interaction file's extension.
        #[serde(default)]
        format: Option<InteractionFormat>,
    },
    /// Generated genre catalog with planted out-of-character items.
    Planted(SynthConfig),
    /// Generated low-rank preference data without item metadata.
    LatentFactor(LatentFactorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub source: DatasetSource,
    #[serde(default = "default_k_core")]
    pub k_core: usize,
}

fn default_k_core() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub num_negatives: usize,
    pub cutoff: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { num_negatives: 100, cutoff: 10, seed: 0 }
    }
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_workers() -> usize {
    4
}

fn default_llm() -> ProviderConfig {
    ProviderConfig::default()
}

/// Every knob of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub cohorts: CohortParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// `weight_decay` must equal `train.weight_decay`.
    #[serde(default)]
    pub influence: InfluenceConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "default_llm")]
    pub llm: ProviderConfig,
    #[serde(default = "default_llm")]
    pub embedder: ProviderConfig,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Users processed concurrently in the filter and explain stages.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PipelineConfig {
    /// Minimal config with defaults everywhere else.
    pub fn new(dataset: DatasetConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset,
            output_dir: output_dir.into(),
            cache_dir: None,
            cohorts: CohortParams::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            influence: InfluenceConfig::default(),
            explain: ExplainConfig::default(),
            filter: FilterConfig::default(),
            llm: ProviderConfig::default(),
            embedder: ProviderConfig::default(),
            bins: DEFAULT_BINS,
            workers: default_workers(),
        }
    }

    /// The bundled planted toy experiment: small enough for CI, with
    /// hyperparameters under which the recommender learns the genre structure.
    pub fn toy(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = Self::new(
            DatasetConfig {
                name: "toy".into(),
                source: DatasetSource::Planted(SynthConfig { seed, ..SynthConfig::default() }),
                k_core: 3,
            },
            output_dir,
        );
        cfg.cohorts.head_frac = 0.5;
        cfg.train.learning_rate = 0.05;
        cfg.train.epochs = 50;
        cfg.train.seed = seed;
        cfg.filter.n = 1;
        cfg
    }

    /// Parses a config; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
        if let DatasetSource::Files { interactions, items, .. } = &mut self.dataset.source {
            fix(interactions);
            if let Some(i) = items.as_mut() {
                fix(i);
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        if self.influence.weight_decay != self.train.weight_decay {
            return Err(format!(
                "influence.weight_decay ({}) must equal train.weight_decay ({})",
                self.influence.weight_decay, self.train.weight_decay
            ));
        }
        if !(self.influence.damping >= 0.0) {
            return Err("influence.damping must be >= 0".into());
        }
        if self.explain.k < 2 {
            return Err("explain.k must be >= 2".into());
        }
        if self.bins < 2 {
            return Err("bins must be >= 2".into());
        }
        if self.eval.cutoff == 0 {
            return Err("eval.cutoff must be >= 1".into());
        }
        if self.dataset.k_core == 0 {
            return Err("dataset.k_core must be >= 1".into());
        }
        self.llm.validate().map_err(|e| format!("llm: {e}"))?;
        self.embedder.validate().map_err(|e| format!("embedder: {e}"))?;
        match &self.dataset.source {
            DatasetSource::Planted(s) => s.validate().map_err(|e| format!("dataset: {e}"))?,
            DatasetSource::LatentFactor(_) | DatasetSource::Files { .. } => {}
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join(paths::CACHE))
    }

    /// Digest of the settings that affect outputs; paths are excluded so a
    /// relocated run hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        c.workers = 0;
        c.filter.max_in_flight = 0;
        if let DatasetSource::Files { interactions, items, .. } = &mut c.dataset.source {
            *interactions = interactions.file_name().map(PathBuf::from).unwrap_or_default();
            *items = items.as_ref().and_then(|p| p.file_name()).map(PathBuf::from);
        }
        json_hash(&c)
    }

    pub fn run_id(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn seeds(&self) -> std::collections::BTreeMap<String, u64> {
        let mut seeds = std::collections::BTreeMap::new();
        seeds.insert("train".into(), self.train.seed);
        seeds.insert("eval".into(), self.eval.seed);
        seeds.insert("influence".into(), self.influence.seed);
        match &self.dataset.source {
            DatasetSource::Planted(s) => {
                seeds.insert("dataset".into(), s.seed);
            }
            DatasetSource::LatentFactor(s) => {
                seeds.insert("dataset".into(), s.seed);
            }
            DatasetSource::Files { .. } => {}
        }
        seeds
    }

    /// JSON Schema of the config document.
    pub fn schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(PipelineConfig)).expect("schema serializes")
    }
}
