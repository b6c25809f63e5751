//! Command-line entry point. Each subcommand runs one pipeline stage (or all
//! of them) from a JSON config, with flags overriding individual fields.
//! Logs go to stderr; results go to files under the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use popalign::pipeline::{DatasetConfig, DatasetSource, Pipeline, PipelineConfig, ReportFormat, Stage};
use popalign::profilefilter::Domain;
use popalign::providers::ProviderKind;

#[derive(Debug, Parser)]
#[command(name = "popalign", version, about = "Popularity-aligned counterfactual explanations for recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, k-core filter and split interactions; compute popularity.
    Prepare(Overrides),
    /// Select niche and blockbuster user cohorts.
    Cohorts(Overrides),
    /// Train the recommender.
    Train(Overrides),
    /// Leave-one-out nDCG of the trained recommender.
    Eval(Overrides),
    /// Drop out-of-character history items via profile dissimilarity.
    Filter(Overrides),
    /// Counterfactual explanations on raw and filtered histories.
    Explain(Overrides),
    /// Popularity-alignment metrics and significance tests.
    Evaluate(Overrides),
    /// Render the evaluation as CSV tables and an SVG figure.
    Report {
        /// Output formats, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
        format: Vec<ReportFormat>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Every stage in order.
    Run(Overrides),
    /// Print the JSON Schema of the config file.
    Schema,
}

/// Config file plus per-field overrides. Without `--config`, a config is
/// built from `--interactions` and `--out`.
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory of the run.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    interactions: Option<PathBuf>,
    /// Item metadata (JSONL).
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    k_core: Option<usize>,

    #[arg(long)]
    top_frac: Option<f64>,
    #[arg(long)]
    bottom_frac: Option<f64>,
    #[arg(long)]
    max_history: Option<usize>,
    #[arg(long)]
    per_group: Option<usize>,

    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Applies to training and to the influence Hessian.
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Sampled negatives: per positive for `train`, per user for `eval`.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cutoff: Option<usize>,

    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_set: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,

    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    min_remaining: Option<usize>,
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    /// Backend for both profile generation and embedding.
    #[arg(long, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Chat-completions endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model_name: Option<String>,
    /// Embeddings endpoint; defaults to `--endpoint`.
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long)]
    embed_model_name: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    timeout_s: Option<f64>,
    #[arg(long)]
    retries: Option<usize>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Response cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,

    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "stub" => Ok(ProviderKind::Stub),
        "remote" => Ok(ProviderKind::Remote),
        other => Err(format!("unknown provider {other:?} (expected stub or remote)")),
    }
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl Overrides {
    fn base_config(&self) -> Result<PipelineConfig, String> {
        if let Some(path) = &self.config {
            return PipelineConfig::load(path);
        }
        let interactions = self.interactions.clone().ok_or("either --config or --interactions is required")?;
        let out = self.out.clone().ok_or("--out is required without --config")?;
        let name =
            interactions.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "dataset".into());
        let source = DatasetSource::Files { interactions, items: self.metadata.clone(), format: None };
        Ok(PipelineConfig::new(DatasetConfig { name, source, k_core: 5 }, out))
    }

    fn apply(&self, cfg: &mut PipelineConfig) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut cfg.output_dir, &self.out);
        if let Some(cache) = &self.cache {
            cfg.cache_dir = Some(cache.clone());
        }
        if let DatasetSource::Files { interactions, items, .. } = &mut cfg.dataset.source {
            set(interactions, &self.interactions);
            if self.metadata.is_some() {
                *items = self.metadata.clone();
            }
        }
        set(&mut cfg.dataset.k_core, &self.k_core);

        set(&mut cfg.cohorts.top_frac, &self.top_frac);
        set(&mut cfg.cohorts.bottom_frac, &self.bottom_frac);
        set(&mut cfg.cohorts.max_history, &self.max_history);
        set(&mut cfg.cohorts.per_group, &self.per_group);

        set(&mut cfg.train.dim, &self.dim);
        set(&mut cfg.train.learning_rate, &self.lr);
        set(&mut cfg.train.weight_decay, &self.weight_decay);
        set(&mut cfg.influence.weight_decay, &self.weight_decay);
        set(&mut cfg.train.epochs, &self.epochs);
        set(&mut cfg.train.seed, &self.seed);
        set(&mut cfg.eval.cutoff, &self.cutoff);

        set(&mut cfg.explain.k, &self.k);
        set(&mut cfg.explain.max_set, &self.max_set);
        set(&mut cfg.influence.damping, &self.damping);

        set(&mut cfg.filter.n, &self.n);
        set(&mut cfg.filter.min_remaining, &self.min_remaining);
        set(&mut cfg.filter.domain, &self.domain);
        for provider in [&mut cfg.llm, &mut cfg.embedder] {
            set(&mut provider.kind, &self.provider);
            set(&mut provider.temperature, &self.temperature);
            set(&mut provider.timeout_s, &self.timeout_s);
            set(&mut provider.max_retries, &self.retries);
            if self.api_key_env.is_some() {
                provider.api_key_env = self.api_key_env.clone();
            }
        }
        set(&mut cfg.llm.endpoint, &self.endpoint);
        set(&mut cfg.llm.model_name, &self.model_name);
        set(&mut cfg.embedder.endpoint, &self.embed_endpoint.clone().or_else(|| self.endpoint.clone()));
        set(&mut cfg.embedder.model_name, &self.embed_model_name);

        set(&mut cfg.bins, &self.bins);
        set(&mut cfg.workers, &self.workers);
    }

    fn apply_negatives(&self, cfg: &mut PipelineConfig, stage: Option<Stage>) {
        if let Some(n) = self.negatives {
            match stage {
                Some(Stage::Eval) => cfg.eval.num_negatives = n,
                _ => {
                    cfg.train.negatives_per_positive = n;
                    cfg.influence.negatives_per_positive = n;
                }
            }
        }
    }

    fn pipeline(&self, stage: Option<Stage>) -> Result<Pipeline, CliError> {
        let mut cfg = self.base_config().map_err(CliError::Config)?;
        self.apply(&mut cfg);
        self.apply_negatives(&mut cfg, stage);
        Pipeline::new(cfg).map_err(CliError::Pipeline)
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Pipeline(popalign::pipeline::PipelineError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let single = |stage: Stage, o: &Overrides| -> Result<(), CliError> {
        let p = o.pipeline(Some(stage))?;
        p.run_stage(stage).map_err(CliError::Pipeline)?;
        Ok(())
    };
    match command {
        Command::Prepare(o) => single(Stage::Prepare, &o),
        Command::Cohorts(o) => single(Stage::Cohorts, &o),
        Command::Train(o) => single(Stage::Train, &o),
        Command::Eval(o) => single(Stage::Eval, &o),
        Command::Filter(o) => single(Stage::Filter, &o),
        Command::Explain(o) => single(Stage::Explain, &o),
        Command::Evaluate(o) => single(Stage::Evaluate, &o),
        Command::Report { format, overrides } => {
            let p = overrides.pipeline(Some(Stage::Report))?;
            p.run_report(&format).map_err(CliError::Pipeline)?;
            Ok(())
        }
        Command::Run(o) => {
            let p = o.pipeline(None)?;
            p.run(&Stage::ALL).map_err(CliError::Pipeline)?;
            log::info!("outputs in {}", p.config.output_dir.display());
            Ok(())
        }
        Command::Schema => {
            let text = serde_json::to_string_pretty(&PipelineConfig::schema()).expect("schema serializes");
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
