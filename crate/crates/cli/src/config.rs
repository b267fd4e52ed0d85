//! Run configuration: command-line flags layered over an optional JSON
//! config file, over deterministic defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use icsel_core::influence::{Damping, Fusion};
use icsel_core::pipeline::FisherSet;
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError(message.into())
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Dataset directory containing train.jsonl and valid.jsonl
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Schema name: sick | cola | ethos-disability | tweet-feminist |
    /// tweet-hillary | custom (custom takes verbalizers from --template)
    #[arg(long)]
    pub schema: Option<String>,
    /// Template config JSON; defaults to the schema's builtin template
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Weight container with the embedding and first-layer tensors
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Vocabulary JSON asset
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Merges text asset
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Recall size (top-N candidates per query)
    #[arg(long)]
    pub n: Option<usize>,
    /// Demonstrations per prompt (top-K)
    #[arg(long)]
    pub k: Option<usize>,
    /// Damping: "auto" or a positive number
    #[arg(long)]
    pub lambda: Option<String>,
    /// Score fusion: sum | minmax | bm25-only
    #[arg(long)]
    pub fusion: Option<String>,
    /// Fisher reference set: c1 | train
    #[arg(long)]
    pub fisher_set: Option<String>,
    /// Completion endpoint URL (eval)
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Use the in-process stub endpoint instead of --endpoint (eval)
    #[arg(long)]
    pub stub: bool,
    /// Model name sent to the endpoint
    #[arg(long)]
    pub model: Option<String>,
    /// Output file path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; command-line flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reserved for sampling baselines; the default pipeline is
    /// deterministic regardless
    #[arg(long)]
    pub seed: Option<u64>,
}

/// JSON-file form of the same settings.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    schema: Option<String>,
    template: Option<PathBuf>,
    weights: Option<PathBuf>,
    vocab: Option<PathBuf>,
    merges: Option<PathBuf>,
    n: Option<usize>,
    k: Option<usize>,
    lambda: Option<String>,
    fusion: Option<String>,
    fisher_set: Option<String>,
    endpoint: Option<String>,
    stub: Option<bool>,
    model: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

/// Fully resolved and validated settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub schema: String,
    pub template: Option<PathBuf>,
    pub weights: PathBuf,
    pub vocab: PathBuf,
    pub merges: PathBuf,
    pub n: usize,
    pub k: usize,
    pub damping: Damping,
    pub fusion: Fusion,
    pub fisher_set: FisherSet,
    pub endpoint: Option<String>,
    pub stub: bool,
    pub model: String,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn train_path(&self) -> PathBuf {
        self.dataset.join("train.jsonl")
    }

    pub fn valid_path(&self) -> PathBuf {
        self.dataset.join("valid.jsonl")
    }
}

fn require<T>(value: Option<T>, field: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| err(format!("missing required setting \"{field}\" (flag --{field})")))
}

fn check_exists(path: &Path, field: &str) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(err(format!(
            "\"{field}\": path {} does not exist",
            path.display()
        )))
    }
}

fn parse_damping(text: &str) -> Result<Damping, ConfigError> {
    if text == "auto" {
        return Ok(Damping::Auto);
    }
    let value: f64 = text
        .parse()
        .map_err(|_| err(format!("\"lambda\": expected \"auto\" or a number, got {text:?}")))?;
    if value > 0.0 {
        Ok(Damping::Fixed(value))
    } else {
        Err(err(format!("\"lambda\": must be positive, got {value}")))
    }
}

fn parse_fusion(text: &str) -> Result<Fusion, ConfigError> {
    match text {
        "sum" => Ok(Fusion::Sum),
        "minmax" => Ok(Fusion::Minmax),
        "bm25-only" => Ok(Fusion::Bm25Only),
        other => Err(err(format!(
            "\"fusion\": expected sum | minmax | bm25-only, got {other:?}"
        ))),
    }
}

fn parse_fisher_set(text: &str) -> Result<FisherSet, ConfigError> {
    match text {
        "c1" => Ok(FisherSet::C1),
        "train" => Ok(FisherSet::Train),
        other => Err(err(format!(
            "\"fisher-set\": expected c1 | train, got {other:?}"
        ))),
    }
}

/// Layer flags over the config file over defaults, then validate.
pub fn resolve(args: &RunArgs, needs_endpoint: bool, default_out: &str) -> Result<RunConfig, ConfigError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| err(format!("\"config\": cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| err(format!("\"config\": {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let config = RunConfig {
        dataset: require(args.dataset.clone().or(file.dataset), "dataset")?,
        schema: args
            .schema
            .clone()
            .or(file.schema)
            .unwrap_or_else(|| "custom".to_string()),
        template: args.template.clone().or(file.template),
        weights: require(args.weights.clone().or(file.weights), "weights")?,
        vocab: require(args.vocab.clone().or(file.vocab), "vocab")?,
        merges: require(args.merges.clone().or(file.merges), "merges")?,
        n: args.n.or(file.n).unwrap_or(100),
        k: args.k.or(file.k).unwrap_or(3),
        damping: parse_damping(
            args.lambda
                .as_deref()
                .or(file.lambda.as_deref())
                .unwrap_or("auto"),
        )?,
        fusion: parse_fusion(
            args.fusion
                .as_deref()
                .or(file.fusion.as_deref())
                .unwrap_or("sum"),
        )?,
        fisher_set: parse_fisher_set(
            args.fisher_set
                .as_deref()
                .or(file.fisher_set.as_deref())
                .unwrap_or("c1"),
        )?,
        endpoint: args.endpoint.clone().or(file.endpoint),
        stub: args.stub || file.stub.unwrap_or(false),
        model: args
            .model
            .clone()
            .or(file.model)
            .unwrap_or_else(|| "gpt2".to_string()),
        out: args
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from(default_out)),
        seed: args.seed.or(file.seed).unwrap_or(0),
    };

    if config.k < 1 {
        return Err(err("\"k\": must be at least 1"));
    }
    if config.n < config.k {
        return Err(err(format!(
            "\"n\": recall size {} must be at least k = {}",
            config.n, config.k
        )));
    }
    check_exists(&config.dataset, "dataset")?;
    check_exists(&config.train_path(), "dataset/train.jsonl")?;
    check_exists(&config.valid_path(), "dataset/valid.jsonl")?;
    check_exists(&config.weights, "weights")?;
    check_exists(&config.vocab, "vocab")?;
    check_exists(&config.merges, "merges")?;
    if let Some(template) = &config.template {
        check_exists(template, "template")?;
    }
    if config.schema == "custom" && config.template.is_none() {
        return Err(err(
            "\"template\": schema \"custom\" needs a template file for its verbalizers",
        ));
    }
    if needs_endpoint {
        match (&config.endpoint, config.stub) {
            (Some(_), true) => {
                return Err(err("\"endpoint\" and \"stub\" are mutually exclusive"))
            }
            (None, false) => {
                return Err(err("\"endpoint\": required unless --stub is given"))
            }
            _ => {}
        }
    }
    Ok(config)
}
