//! Command-line driver: demonstration selection, endpoint evaluation, and
//! toy fixture generation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use icsel_core::corpus::{load_dataset, load_template, Corpus, Schema, Template};
use icsel_core::eval::InferenceClient;
use icsel_core::fixtures::write_toy_fixture;
use icsel_core::model_slice::ModelSlice;
use icsel_core::pipeline::{run_experiment, PipelineConfig, SelectionPipeline};
use icsel_core::stub::StubServer;
use icsel_core::tokenizer::BpeVocab;

use config::{resolve, ConfigError, RunArgs, RunConfig};

#[derive(Parser)]
#[command(
    name = "icsel",
    version,
    about = "BM25 recall + influence reranking for in-context example selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select demonstrations for every validation query and write one JSON
    /// record per line
    Select(RunArgs),
    /// Select, classify each query against a completion endpoint, and write
    /// an accuracy / macro-F1 report
    Eval(RunArgs),
    /// Write the bundled toy assets (dataset, template, vocab, merges,
    /// weights) for offline runs
    GenFixtures {
        /// Target directory
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Select(args) => cmd_select(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::GenFixtures { out } => cmd_gen_fixtures(&out),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

/// Resolve schema and template together: builtin schemas carry default
/// templates, "custom" takes its verbalizers from the template file.
fn load_schema_and_template(config: &RunConfig) -> Result<(Schema, Template), CliError> {
    if config.schema == "custom" {
        let path = config.template.as_ref().expect("validated by resolve");
        let (template, verbalizers) =
            load_template(path).with_context(|| format!("template {}", path.display()))?;
        let pair = template.body.contains("[S2]");
        let schema = Schema::new("custom", pair, verbalizers)
            .map_err(|e| ConfigError(format!("\"template\": {e}")))?;
        template
            .validate(schema.pair)
            .map_err(|e| ConfigError(format!("\"template\": {e}")))?;
        return Ok((schema, template));
    }

    let schema = Schema::builtin(&config.schema).ok_or_else(|| {
        ConfigError(format!(
            "\"schema\": unknown schema {:?}; expected sick | cola | ethos-disability | \
             tweet-feminist | tweet-hillary | custom",
            config.schema
        ))
    })?;
    let template = match &config.template {
        Some(path) => {
            let (template, verbalizers) =
                load_template(path).with_context(|| format!("template {}", path.display()))?;
            if verbalizers != schema.verbalizers {
                return Err(ConfigError(format!(
                    "\"template\": verbalizers {verbalizers:?} disagree with schema {:?} ({:?})",
                    schema.name, schema.verbalizers
                ))
                .into());
            }
            template
        }
        None => Schema::builtin_template(&config.schema).expect("builtin schema has a template"),
    };
    template
        .validate(schema.pair)
        .map_err(|e| ConfigError(format!("\"template\": {e}")))?;
    Ok((schema, template))
}

fn load_pipeline(config: &RunConfig) -> Result<(SelectionPipeline, Corpus), CliError> {
    let (schema, template) = load_schema_and_template(config)?;
    let train = load_dataset(&config.train_path(), &schema).context("loading training split")?;
    let valid = load_dataset(&config.valid_path(), &schema).context("loading validation split")?;
    let vocab = BpeVocab::load(&config.vocab, &config.merges).context("loading tokenizer assets")?;
    let slice = ModelSlice::load(&config.weights).context("loading weight container")?;
    let pipeline_config = PipelineConfig {
        n: config.n,
        k: config.k,
        damping: config.damping,
        fusion: config.fusion,
        fisher_set: config.fisher_set,
    };
    let pipeline = SelectionPipeline::new(train, template, vocab, slice, pipeline_config)
        .context("building selection pipeline")?;
    Ok((pipeline, valid))
}

fn cmd_select(args: &RunArgs) -> Result<(), CliError> {
    let config = resolve(args, false, "selections.jsonl")?;
    let (pipeline, valid) = load_pipeline(&config)?;
    let records = pipeline
        .select_all(&valid)
        .context("selecting demonstrations")?;

    let mut out = fs::File::create(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))?;
    for record in &records {
        let line = serde_json::to_string(record).context("serializing selection record")?;
        writeln!(out, "{line}").context("writing selection file")?;
    }
    println!(
        "wrote {} selection records to {} (n={}, k={}, seed={} unused: pipeline is deterministic)",
        records.len(),
        config.out.display(),
        config.n,
        config.k,
        config.seed
    );
    Ok(())
}

fn cmd_eval(args: &RunArgs) -> Result<(), CliError> {
    let config = resolve(args, true, "report.json")?;
    let (pipeline, valid) = load_pipeline(&config)?;

    let stub_server = if config.stub {
        Some(StubServer::start().context("starting stub endpoint")?)
    } else {
        None
    };
    let endpoint = match &stub_server {
        Some(server) => server.url(),
        None => config.endpoint.clone().expect("validated by resolve"),
    };
    let client = InferenceClient::with_limits(
        &endpoint,
        &config.model,
        Duration::from_secs(120),
        2,
        4,
    );
    // Fail fast on an unreachable or incapable endpoint instead of
    // producing an all-error report.
    client
        .score_label("ping", "x")
        .map_err(anyhow::Error::from)
        .context("endpoint preflight failed")?;

    let report = run_experiment(&pipeline, &client, &valid).context("running evaluation")?;
    let body = serde_json::to_string_pretty(&report).context("serializing report")?;
    fs::write(&config.out, body + "\n")
        .with_context(|| format!("writing {}", config.out.display()))?;

    println!(
        "evaluated {} queries ({} scored{}): accuracy {:.4}, macro-F1 {:.4}",
        report.n_queries,
        report.n_scored,
        if report.partial { ", partial" } else { "" },
        report.accuracy,
        report.macro_f1
    );
    println!("report written to {}", config.out.display());
    Ok(())
}

fn cmd_gen_fixtures(out: &PathBuf) -> Result<(), CliError> {
    let fixture = write_toy_fixture(out).context("writing fixtures")?;
    println!("toy assets written under {}", out.display());
    println!(
        "try: icsel eval --dataset {} --schema custom --template {} --weights {} --vocab {} --merges {} --n 6 --k 3 --stub --out report.json",
        fixture.dataset_dir.display(),
        fixture.template_path.display(),
        fixture.weights_path.display(),
        fixture.vocab_path.display(),
        fixture.merges_path.display()
    );
    Ok(())
}
