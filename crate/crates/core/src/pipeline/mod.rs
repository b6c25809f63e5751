//! End-to-end experiment pipeline.
//!
//! Stages run in a fixed order and communicate only through files under the
//! output directory, so any stage can be rerun on its own once its inputs
//! exist. Every stage appends a record to `manifest.jsonl`.

mod config;
mod manifest;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    self, compute_popularity, k_core_filter, leave_one_out_split, load_interactions, load_item_meta, select_cohorts,
    write_interactions, write_item_meta, CohortLabel, CohortSelection, DataError, InteractionFormat, ItemMeta,
    PopularityTable, Split,
};
use crate::influence::{accent_explain, build_user_state, CounterfactualResult, InfluenceError, Method};
use crate::metrics::{
    self, bias_report, paired_epd_test, top_popular_results, BiasReport, MetricsError, PairedTest, PopPositionBin,
};
use crate::profilefilter::{greedy_filter, FilterConfig, FilterError, FilterResult, ProfileServices};
use crate::providers::{build_providers, CacheStats, ProviderError, ResponseCache};
use crate::recsys::{self, evaluate_ndcg, load_model, save_model, RecsysError};
use crate::synth::{latent_factor_interactions, planted_catalog};
use crate::util::{atomic_write, bounded_map, read_jsonl, sha256_hex, write_jsonl};

pub use config::{DatasetConfig, DatasetSource, EvalConfig, PipelineConfig};
pub use manifest::{read as read_manifest, ArtifactRecord, ProviderUsage, StageRecord, StageStatus};
pub use report::{emit_report, fig_bins_csv, svg_scatter, table_csv, ReportFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prepare,
    Cohorts,
    Train,
    Eval,
    Filter,
    Explain,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Prepare,
        Stage::Cohorts,
        Stage::Train,
        Stage::Eval,
        Stage::Filter,
        Stage::Explain,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Cohorts => "cohorts",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Filter => "filter",
            Stage::Explain => "explain",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing {}; run the `{stage}` stage first", path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Recsys(#[from] RecsysError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Data(_) => 4,
            PipelineError::Provider(_) | PipelineError::Filter(FilterError::Provider { .. }) => 5,
            PipelineError::Io { .. } => 6,
            PipelineError::Recsys(_)
            | PipelineError::Influence(_)
            | PipelineError::Filter(_)
            | PipelineError::Metrics(_) => 7,
        }
    }
}

/// Relative artifact paths under the output directory.
pub mod paths {
    pub const INTERACTIONS: &str = "data/interactions.tsv";
    pub const ITEMS: &str = "data/items.jsonl";
    pub const TRAIN: &str = "data/train.tsv";
    pub const TEST: &str = "data/test.tsv";
    pub const POPULARITY: &str = "data/popularity.tsv";
    pub const COHORTS: &str = "cohorts.json";
    pub const MODEL: &str = "model/model.bin";
    pub const MODEL_MANIFEST: &str = "model/model.json";
    pub const TRAIN_REPORT: &str = "model/train_report.json";
    pub const EVAL: &str = "eval.json";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const FILTERED_PARTIAL: &str = "filtered.partial.jsonl";
    pub const CFS_ACCENT: &str = "cfs/accent.jsonl";
    pub const CFS_FILTERED: &str = "cfs/accent_filtered.jsonl";
    pub const CFS_TOP_POPULAR: &str = "cfs/top_popular.jsonl";
    pub const REPORT: &str = "report.json";
    pub const TABLE: &str = "table.csv";
    pub const FIG_BINS: &str = "fig_bins.csv";
    pub const FIG_SVG: &str = "fig.svg";
    pub const MANIFEST: &str = "manifest.jsonl";
    pub const CACHE: &str = "cache";
}

/// One method's comparison against accent on one user population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cohort: Option<CohortLabel>,
    pub method: Method,
    pub baseline: Method,
    pub test: Option<PairedTest>,
    /// Why `test` is absent.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub bins: usize,
    pub significance_test: String,
    pub reports: Vec<BiasReport>,
    pub comparisons: Vec<Comparison>,
    pub fig_bins: Vec<PopPositionBin>,
}

impl EvaluationReport {
    pub fn report(&self, method: Method, cohort: Option<CohortLabel>) -> Option<&BiasReport> {
        self.reports.iter().find(|r| r.method == method && r.cohort == cohort)
    }

    pub fn comparison(&self, method: Method, cohort: Option<CohortLabel>) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.method == method && c.cohort == cohort)
    }
}

pub const SIGNIFICANCE_TEST: &str =
    "two-sided paired t-test on per-user EPD, users with found explanations under both methods";

/// Shared state for one pipeline invocation.
#[derive(Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    cache: ResponseCache,
}

struct StageOutput {
    inputs: Vec<&'static str>,
    outputs: Vec<String>,
    provider: Option<ProviderUsage>,
    notes: Vec<String>,
}

impl StageOutput {
    fn new(inputs: Vec<&'static str>) -> Self {
        Self { inputs, outputs: Vec::new(), provider: None, notes: Vec::new() }
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        let cache = ResponseCache::on_disk(config.cache_dir());
        Ok(Self { config, cache })
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    fn require(&self, rel: &str, stage: Stage) -> Result<PathBuf, PipelineError> {
        let path = self.out(rel);
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact { stage, path })
        }
    }

    /// Runs the requested stages in pipeline order.
    pub fn run(&self, stages: &[Stage]) -> Result<Vec<StageRecord>, PipelineError> {
        let mut ordered: Vec<Stage> = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        let mut records = Vec::new();
        for stage in ordered {
            records.push(self.run_stage(stage)?);
        }
        Ok(records)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        log::info!("stage {stage}: start");
        std::fs::create_dir_all(&self.config.output_dir).map_err(|e| PipelineError::io(&self.config.output_dir, e))?;
        let before = self.cache.stats();
        let result = match stage {
            Stage::Prepare => self.prepare(),
            Stage::Cohorts => self.cohorts(),
            Stage::Train => self.train(),
            Stage::Eval => self.eval(),
            Stage::Filter => self.filter(),
            Stage::Explain => self.explain(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(&[ReportFormat::Csv, ReportFormat::Svg]),
        };
        let record = match result {
            Ok(mut out) => {
                if stage == Stage::Filter {
                    let after = self.cache.stats();
                    out.provider = Some(ProviderUsage {
                        requests: after.requests - before.requests,
                        cache_hits: after.hits - before.hits,
                    });
                }
                self.record(stage, StageStatus::Complete, out, None)?
            }
            Err(e) => {
                let _ = self.record(stage, StageStatus::Failed, StageOutput::new(Vec::new()), Some(e.to_string()));
                return Err(e);
            }
        };
        log::info!("stage {stage}: complete");
        Ok(record)
    }

    fn record(
        &self,
        stage: Stage,
        status: StageStatus,
        out: StageOutput,
        error: Option<String>,
    ) -> Result<StageRecord, PipelineError> {
        let fingerprint = |rel: &str| -> Result<ArtifactRecord, PipelineError> {
            let path = self.out(rel);
            let sha256 = crate::util::file_sha256(&path).map_err(|e| PipelineError::io(&path, e))?;
            Ok(ArtifactRecord { path: rel.to_string(), sha256 })
        };
        let inputs = out
            .inputs
            .iter()
            .filter(|rel| self.out(rel).exists())
            .map(|rel| fingerprint(rel))
            .collect::<Result<_, _>>()?;
        let outputs = out.outputs.iter().map(|rel| fingerprint(rel)).collect::<Result<_, _>>()?;
        let record = StageRecord {
            run_id: self.config.run_id(),
            stage,
            status,
            config_hash: self.config.hash(),
            seeds: self.config.seeds(),
            inputs,
            outputs,
            provider: out.provider,
            notes: out.notes,
            error,
        };
        manifest::append(&self.out(paths::MANIFEST), &record)?;
        Ok(record)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), PipelineError> {
        let path = self.out(rel);
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        atomic_write(&path, &bytes).map_err(|e| PipelineError::io(&path, e))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str, stage: Stage) -> Result<T, PipelineError> {
        let path = self.require(rel, stage)?;
        let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::io(&path, e.into()))
    }

    fn write_records<T: Serialize>(&self, rel: &str, records: &[T]) -> Result<(), PipelineError> {
        let path = self.out(rel);
        write_jsonl(&path, records).map_err(|e| PipelineError::io(&path, e))
    }

    fn read_records<T: serde::de::DeserializeOwned>(&self, rel: &str, stage: Stage) -> Result<Vec<T>, PipelineError> {
        let path = self.require(rel, stage)?;
        read_jsonl(&path).map_err(|e| PipelineError::io(&path, e))
    }

    fn load_split(&self) -> Result<Split, PipelineError> {
        let train = load_interactions(&self.require(paths::TRAIN, Stage::Prepare)?, InteractionFormat::Tsv)?;
        let test = Split::read_test(&self.require(paths::TEST, Stage::Prepare)?)?;
        Ok(Split { train: train.interactions, test })
    }

    fn load_popularity(&self) -> Result<PopularityTable, PipelineError> {
        Ok(PopularityTable::read_tsv(&self.require(paths::POPULARITY, Stage::Prepare)?)?)
    }

    fn load_histories(&self) -> Result<BTreeMap<String, Vec<String>>, PipelineError> {
        Ok(self.load_split()?.train_histories())
    }

    fn load_cohorts(&self) -> Result<CohortSelection, PipelineError> {
        self.read_json(paths::COHORTS, Stage::Cohorts)
    }

    fn prepare(&self) -> Result<StageOutput, PipelineError> {
        let ds = &self.config.dataset;
        let (raw, items): (Vec<data::Interaction>, BTreeMap<String, ItemMeta>) = match &ds.source {
            DatasetSource::Files { interactions, items, format } => {
                let fmt = format.unwrap_or_else(|| InteractionFormat::from_path(interactions));
                let rows = load_interactions(interactions, fmt)?.interactions;
                let meta = match items {
                    Some(p) => load_item_meta(p)?,
                    None => BTreeMap::new(),
                };
                (rows, meta)
            }
            DatasetSource::Planted(cfg) => {
                let synth = planted_catalog(cfg).map_err(PipelineError::Config)?;
                (synth.interactions, synth.items)
            }
            DatasetSource::LatentFactor(cfg) => (latent_factor_interactions(cfg), BTreeMap::new()),
        };
        let kept = k_core_filter(&raw, ds.k_core)?;
        let split = leave_one_out_split(&kept)?;
        let popularity = compute_popularity(&split.train, &format!("{}: fraction of training users", ds.name))?;
        let kept_items: std::collections::BTreeSet<&str> = kept.iter().map(|i| i.item_id.as_str()).collect();
        let items: BTreeMap<String, ItemMeta> =
            items.into_iter().filter(|(k, _)| kept_items.contains(k.as_str())).collect();

        write_interactions(&self.out(paths::INTERACTIONS), &kept)?;
        write_item_meta(&self.out(paths::ITEMS), &items)?;
        write_interactions(&self.out(paths::TRAIN), &split.train)?;
        split.write_test(&self.out(paths::TEST))?;
        popularity.write_tsv(&self.out(paths::POPULARITY))?;
        let mut out = StageOutput::new(Vec::new());
        out.notes.push(format!(
            "{} raw rows, {} after {}-core, {} users, {} items",
            raw.len(),
            kept.len(),
            ds.k_core,
            split.test.len(),
            popularity.values.len()
        ));
        out.outputs = [paths::INTERACTIONS, paths::ITEMS, paths::TRAIN, paths::TEST, paths::POPULARITY]
            .map(String::from)
            .to_vec();
        Ok(out)
    }

    fn cohorts(&self) -> Result<StageOutput, PipelineError> {
        let split = self.load_split()?;
        let popularity = self.load_popularity()?;
        let selection = select_cohorts(&split.train, &popularity, &self.config.cohorts)?;
        if selection.short {
            log::warn!(
                "cohorts smaller than requested: {} niche, {} blockbuster",
                selection.niche.user_ids.len(),
                selection.blockbuster.user_ids.len()
            );
        }
        self.write_json(paths::COHORTS, &selection)?;
        let mut out = StageOutput::new(vec![paths::TRAIN, paths::POPULARITY]);
        out.notes.push(format!(
            "{} niche, {} blockbuster users",
            selection.niche.user_ids.len(),
            selection.blockbuster.user_ids.len()
        ));
        out.outputs.push(paths::COHORTS.into());
        Ok(out)
    }

    fn train(&self) -> Result<StageOutput, PipelineError> {
        let split = self.load_split()?;
        let (params, report) = recsys::train(&split, &self.config.train)?;
        save_model(&self.out(paths::MODEL), &params, &self.config.train)?;
        self.write_json(paths::TRAIN_REPORT, &report)?;
        let mut out = StageOutput::new(vec![paths::TRAIN, paths::TEST]);
        if let Some(last) = report.epoch_losses.last() {
            out.notes.push(format!("final epoch loss {last:.6}"));
        }
        out.outputs = [paths::MODEL, paths::MODEL_MANIFEST, paths::TRAIN_REPORT].map(String::from).to_vec();
        Ok(out)
    }

    fn load_params(&self) -> Result<recsys::ModelParams, PipelineError> {
        Ok(load_model(&self.require(paths::MODEL, Stage::Train)?)?)
    }

    fn eval(&self) -> Result<StageOutput, PipelineError> {
        let split = self.load_split()?;
        let params = self.load_params()?;
        let e = &self.config.eval;
        let report = evaluate_ndcg(&params, &split, e.num_negatives, e.cutoff, e.seed);
        log::info!("nDCG@{} = {:.4} over {} users", e.cutoff, report.ndcg, report.users);
        self.write_json(paths::EVAL, &report)?;
        let mut out = StageOutput::new(vec![paths::TRAIN, paths::TEST, paths::MODEL]);
        out.notes.push(format!("ndcg@{} {:.6}", e.cutoff, report.ndcg));
        out.outputs.push(paths::EVAL.into());
        Ok(out)
    }

    fn filter(&self) -> Result<StageOutput, PipelineError> {
        let histories = self.load_histories()?;
        let cohorts = self.load_cohorts()?;
        let items_path = self.require(paths::ITEMS, Stage::Prepare)?;
        let has_items = std::fs::metadata(&items_path).map_err(|e| PipelineError::io(&items_path, e))?.len() > 0;
        let items = if has_items { load_item_meta(&items_path)? } else { BTreeMap::new() };
        let (generator, embedder) = build_providers(&self.config.llm, &self.config.embedder)?;
        let services =
            ProfileServices { generator: generator.as_ref(), embedder: embedder.as_ref(), cache: &self.cache };
        let users: Vec<String> = cohorts.all_users().into_iter().map(|(_, u)| u).collect();
        let base = self.config.filter;
        let mut clipped = 0usize;
        let jobs: Vec<(String, FilterConfig)> = users
            .iter()
            .filter_map(|u| {
                let h = histories.get(u)?;
                let room = h.len().saturating_sub(base.min_remaining);
                if room < base.n {
                    clipped += 1;
                }
                Some((u.clone(), FilterConfig { n: base.n.min(room), ..base }))
            })
            .collect();
        let outcomes = bounded_map(&jobs, self.config.workers, |(user, cfg)| {
            greedy_filter(user, &histories[user], &items, services, cfg)
        });
        let mut results = Vec::new();
        let mut failure = None;
        for outcome in outcomes {
            match outcome {
                Ok(r) => results.push(r),
                Err(FilterError::Provider { completed_steps, partial, source }) if failure.is_none() => {
                    results.push((*partial).clone());
                    failure = Some(FilterError::Provider { completed_steps, partial, source });
                }
                Err(e) if failure.is_none() => failure = Some(e),
                Err(_) => {}
            }
        }
        if let Some(err) = failure {
            self.write_records(paths::FILTERED_PARTIAL, &results)?;
            return Err(err.into());
        }
        self.write_records(paths::FILTERED, &results)?;
        let mut out = StageOutput::new(vec![paths::TRAIN, paths::ITEMS, paths::COHORTS]);
        if clipped > 0 {
            out.notes.push(format!("{clipped} user(s) with n clipped to keep min_remaining items"));
        }
        out.outputs.push(paths::FILTERED.into());
        Ok(out)
    }

    fn explain(&self) -> Result<StageOutput, PipelineError> {
        let params = self.load_params()?;
        let histories = self.load_histories()?;
        let cohorts = self.load_cohorts()?;
        let popularity = self.load_popularity()?;
        let filtered: Option<BTreeMap<String, FilterResult>> = if self.out(paths::FILTERED).exists() {
            let rows: Vec<FilterResult> = self.read_records(paths::FILTERED, Stage::Filter)?;
            Some(rows.into_iter().map(|r| (r.user_id.clone(), r)).collect())
        } else {
            None
        };
        let influence_cfg = self.config.influence;
        let explain_cfg = self.config.explain;
        let users: Vec<String> =
            cohorts.all_users().into_iter().map(|(_, u)| u).filter(|u| histories.contains_key(u)).collect();

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        type Pair = (CounterfactualResult, Option<CounterfactualResult>);
        let per_user: Vec<Result<Pair, InfluenceError>> = pool.install(|| {
            users
                .par_iter()
                .map(|u| {
                    let state = build_user_state(&params, &histories[u], u, &influence_cfg)?;
                    let raw = accent_explain(&params, &state, &explain_cfg, None, Method::Accent)?;
                    let filt = match filtered.as_ref().and_then(|f| f.get(u)) {
                        Some(fr) => Some(accent_explain(
                            &params,
                            &state,
                            &explain_cfg,
                            Some(&fr.remaining_history),
                            Method::AccentFiltered,
                        )?),
                        None => None,
                    };
                    Ok((raw, filt))
                })
                .collect()
        });
        let mut accent = Vec::new();
        let mut accent_filtered = Vec::new();
        for r in per_user {
            let (raw, filt) = r?;
            accent.push(raw);
            accent_filtered.extend(filt);
        }
        let baseline = top_popular_results(&accent, &histories, &popularity);

        let mut out =
            StageOutput::new(vec![paths::MODEL, paths::TRAIN, paths::COHORTS, paths::POPULARITY, paths::FILTERED]);
        self.write_records(paths::CFS_ACCENT, &accent)?;
        self.write_records(paths::CFS_TOP_POPULAR, &baseline)?;
        out.outputs.extend([paths::CFS_ACCENT.to_string(), paths::CFS_TOP_POPULAR.to_string()]);
        if filtered.is_some() {
            self.write_records(paths::CFS_FILTERED, &accent_filtered)?;
            out.outputs.push(paths::CFS_FILTERED.into());
        } else {
            log::warn!("no {} found; skipping the filtered method", paths::FILTERED);
            out.notes.push("filtered method skipped: no filter output".into());
        }
        out.notes.push(format!(
            "no-CF rate accent {:.4}{}",
            metrics::no_cf_rate(&accent),
            if filtered.is_some() {
                format!(", accent_filtered {:.4}", metrics::no_cf_rate(&accent_filtered))
            } else {
                String::new()
            }
        ));
        Ok(out)
    }

    /// Loads the explanation files that exist, keyed by method.
    fn load_explanations(&self) -> Result<BTreeMap<Method, Vec<CounterfactualResult>>, PipelineError> {
        let mut by_method = BTreeMap::new();
        by_method.insert(Method::Accent, self.read_records(paths::CFS_ACCENT, Stage::Explain)?);
        for (method, rel) in
            [(Method::TopPopular, paths::CFS_TOP_POPULAR), (Method::AccentFiltered, paths::CFS_FILTERED)]
        {
            if self.out(rel).exists() {
                by_method.insert(method, self.read_records(rel, Stage::Explain)?);
            }
        }
        Ok(by_method)
    }

    fn evaluate(&self) -> Result<StageOutput, PipelineError> {
        let explanations = self.load_explanations()?;
        let histories = self.load_histories()?;
        let cohorts = self.load_cohorts()?;
        let popularity = self.load_popularity()?;
        let report = build_evaluation(
            &self.config.dataset.name,
            &explanations,
            &histories,
            &cohorts,
            &popularity,
            self.config.bins,
        )?;
        self.write_json(paths::REPORT, &report)?;
        let mut out = StageOutput::new(vec![
            paths::CFS_ACCENT,
            paths::CFS_FILTERED,
            paths::CFS_TOP_POPULAR,
            paths::TRAIN,
            paths::COHORTS,
            paths::POPULARITY,
        ]);
        for method in explanations.keys() {
            if let Some(r) = report.report(*method, None) {
                out.notes.push(format!("{method}: no-CF rate {:.4}", r.no_cf_rate));
            }
        }
        out.outputs.push(paths::REPORT.into());
        Ok(out)
    }

    /// Writes the requested report formats from `report.json`.
    fn report(&self, formats: &[ReportFormat]) -> Result<StageOutput, PipelineError> {
        let report: EvaluationReport = self.read_json(paths::REPORT, Stage::Evaluate)?;
        let written = emit_report(&report, &self.config.output_dir, formats)?;
        let mut out = StageOutput::new(vec![paths::REPORT]);
        out.outputs = written;
        Ok(out)
    }

    /// Runs the report stage with a subset of formats and records it.
    pub fn run_report(&self, formats: &[ReportFormat]) -> Result<StageRecord, PipelineError> {
        match self.report(formats) {
            Ok(out) => self.record(Stage::Report, StageStatus::Complete, out, None),
            Err(e) => {
                let _ =
                    self.record(Stage::Report, StageStatus::Failed, StageOutput::new(Vec::new()), Some(e.to_string()));
                Err(e)
            }
        }
    }
}

/// Bias reports for every method and population, accent comparisons, and
/// position bins.
pub fn build_evaluation(
    dataset: &str,
    explanations: &BTreeMap<Method, Vec<CounterfactualResult>>,
    histories: &BTreeMap<String, Vec<String>>,
    cohorts: &CohortSelection,
    popularity: &PopularityTable,
    bins: usize,
) -> Result<EvaluationReport, PipelineError> {
    let combined: Vec<String> = cohorts.all_users().into_iter().map(|(_, u)| u).collect();
    let scopes: Vec<(Option<CohortLabel>, &[String])> = vec![
        (Some(CohortLabel::Niche), &cohorts.niche.user_ids),
        (Some(CohortLabel::Blockbuster), &cohorts.blockbuster.user_ids),
        (None, &combined),
    ];
    let mut reports = Vec::new();
    let mut comparisons = Vec::new();
    for &(cohort, users) in &scopes {
        let mut accent_report = None;
        for method in Method::ALL {
            let Some(results) = explanations.get(&method) else {
                continue;
            };
            let r = bias_report(method, cohort, users, results, histories, popularity, bins)?;
            if method == Method::Accent {
                accent_report = Some(r.clone());
            }
            reports.push(r);
        }
        let accent_report = accent_report.expect("accent explanations are required");
        for method in Method::ALL.into_iter().filter(|m| *m != Method::Accent) {
            let Some(r) = reports.iter().find(|r| r.method == method && r.cohort == cohort) else {
                continue;
            };
            let (test, note) = match paired_epd_test(&accent_report.per_user_epd, &r.per_user_epd) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            comparisons.push(Comparison { cohort, method, baseline: Method::Accent, test, note });
        }
    }
    let mut fig_bins = Vec::new();
    for cohort in [&cohorts.niche, &cohorts.blockbuster] {
        let assignment = metrics::assign_user_bins(&cohort.user_ids, histories, popularity, bins);
        for method in Method::ALL {
            if let Some(results) = explanations.get(&method) {
                fig_bins.extend(metrics::pop_position_bins(
                    cohort.label,
                    method,
                    results,
                    histories,
                    popularity,
                    &assignment,
                ));
            }
        }
    }
    Ok(EvaluationReport {
        dataset: dataset.to_string(),
        bins,
        significance_test: SIGNIFICANCE_TEST.into(),
        reports,
        comparisons,
        fig_bins,
    })
}

/// Stable digest of any serializable value.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}
