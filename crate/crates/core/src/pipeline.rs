//! End-to-end wiring: recall candidates, compute meta-gradients, accumulate
//! the Fisher reference set, score influence, fuse, select, and (for
//! evaluation runs) classify each validation query via an inference
//! endpoint.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    build_prompt, render_example, Corpus, CorpusError, Example, LengthPolicy, Template,
};
use crate::eval::{metrics, EvalError, InferenceClient};
use crate::influence::{
    accumulate_fisher, fuse_and_select, Damping, DampedSolver, Fusion, InfluenceError,
};
use crate::model_slice::{MetaGradient, ModelSlice, SliceError};
use crate::recall::{build_index, Bm25Index, DEFAULT_B, DEFAULT_K1};
use crate::tokenizer::{pad_or_truncate, BpeVocab};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("validation corpus declares {got} classes, training corpus {expected}")]
    ClassMismatch { got: usize, expected: usize },
}

/// Which examples feed the Fisher accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherSet {
    /// Per-query, over the recalled candidates.
    C1,
    /// Once, over the full training set.
    Train,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    /// Recall size (top-N).
    pub n: usize,
    /// Demonstrations per prompt (top-K).
    pub k: usize,
    pub damping: Damping,
    pub fusion: Fusion,
    pub fisher_set: FisherSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 100,
            k: 3,
            damping: Damping::Auto,
            fusion: Fusion::Sum,
            fisher_set: FisherSet::C1,
        }
    }
}

/// Selection output for one query, one JSON record per line in the
/// selection file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub query_id: usize,
    pub chosen: Vec<crate::influence::ScoredExample>,
    /// Resolved damping for this query's solve; 0 when no solve ran.
    pub lambda: f64,
    pub fisher_set: FisherSet,
}

/// Immutable bundle of everything selection needs; queries may be processed
/// concurrently against it.
pub struct SelectionPipeline {
    train: Corpus,
    template: Template,
    vocab: BpeVocab,
    slice: ModelSlice,
    index: Bm25Index,
    length: LengthPolicy,
    config: PipelineConfig,
    train_solver: Option<(f64, DampedSolver)>,
}

impl SelectionPipeline {
    pub fn new(
        train: Corpus,
        template: Template,
        vocab: BpeVocab,
        slice: ModelSlice,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        let index = build_index(&train, DEFAULT_K1, DEFAULT_B);
        let length = crate::corpus::length_policy(&train, &template, &vocab)?;
        let mut pipeline = Self {
            train,
            template,
            vocab,
            slice,
            index,
            length,
            config,
            train_solver: None,
        };
        if pipeline.config.fisher_set == FisherSet::Train
            && pipeline.config.fusion != Fusion::Bm25Only
        {
            let grads: Vec<MetaGradient> = pipeline
                .train
                .examples()
                .iter()
                .map(|e| pipeline.meta_gradient_for(e))
                .collect::<Result<_, _>>()?;
            let fisher = accumulate_fisher(&grads, pipeline.config.damping)?;
            pipeline.train_solver = Some((fisher.lambda(), fisher.solver()?));
        }
        Ok(pipeline)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn train_corpus(&self) -> &Corpus {
        &self.train
    }

    pub fn template(&self) -> &Template {
        &self.template
    }

    pub fn length_policy(&self) -> LengthPolicy {
        self.length
    }

    /// Meta-gradient of one training example from its labeled render,
    /// padded or truncated to the corpus target length.
    pub fn meta_gradient_for(&self, example: &Example) -> Result<MetaGradient, PipelineError> {
        let text = render_example(&self.template, example, self.train.verbalizers())?;
        let seq = pad_or_truncate(
            &self.vocab.encode(&text),
            self.length.target_len,
            self.vocab.eot_id(),
        );
        let repr = self.slice.represent(&seq)?;
        Ok(self.slice.meta_gradient(&repr, example.id)?)
    }

    /// Recall, rerank, and select demonstrations for one query.
    pub fn select(&self, query: &Example) -> Result<SelectionRecord, PipelineError> {
        let recall = self.index.recall_top_n(query, self.config.n);
        let mut influences: HashMap<usize, f64> = HashMap::new();
        let mut lambda = 0.0;

        if self.config.fusion != Fusion::Bm25Only {
            let grads: Vec<MetaGradient> = recall
                .ids()
                .iter()
                .map(|&id| self.meta_gradient_for(&self.train.examples()[id]))
                .collect::<Result<_, _>>()?;
            let solver_owned;
            let solver = match self.config.fisher_set {
                FisherSet::Train => {
                    let (l, solver) = self.train_solver.as_ref().expect("train fisher prebuilt");
                    lambda = *l;
                    solver
                }
                FisherSet::C1 => {
                    let fisher = accumulate_fisher(&grads, self.config.damping)?;
                    lambda = fisher.lambda();
                    solver_owned = fisher.solver()?;
                    &solver_owned
                }
            };
            for grad in &grads {
                influences.insert(grad.example_id, solver.influence_sq(grad)?);
            }
        } else {
            influences.extend(recall.ids().iter().map(|&id| (id, 0.0)));
        }

        let result = fuse_and_select(&recall, &influences, self.config.k, self.config.fusion)?;
        Ok(SelectionRecord {
            query_id: result.query_id,
            chosen: result.chosen,
            lambda,
            fisher_set: self.config.fisher_set,
        })
    }

    /// Assemble the few-shot prompt from a selection, demonstrations in
    /// chosen order (ascending fused score, strongest next to the query).
    pub fn prompt(&self, record: &SelectionRecord, query: &Example) -> Result<String, PipelineError> {
        let demos: Vec<&Example> = record
            .chosen
            .iter()
            .map(|s| &self.train.examples()[s.id])
            .collect();
        Ok(build_prompt(
            &self.template,
            &demos,
            query,
            self.train.verbalizers(),
        )?)
    }

    /// Select demonstrations for every query, in query order.
    pub fn select_all(&self, queries: &Corpus) -> Result<Vec<SelectionRecord>, PipelineError> {
        queries.examples().iter().map(|q| self.select(q)).collect()
    }
}

/// Config echo carried in every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k: usize,
    pub n: usize,
    pub lambda: String,
    pub fusion: Fusion,
    pub fisher_set: FisherSet,
    pub model: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: usize,
    pub gold: usize,
    pub predicted: Option<usize>,
    pub chosen: Vec<usize>,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Full evaluation result over a validation corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub n_queries: usize,
    pub n_scored: usize,
    /// True when some queries failed and metrics cover a subset.
    pub partial: bool,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub queries: Vec<QueryOutcome>,
}

/// Evaluate every validation query: select K demonstrations, build the
/// prompt, classify via the endpoint, and aggregate accuracy and macro-F1.
/// Queries run under the client's concurrency cap; per-query failures are
/// recorded and mark the report partial.
pub fn run_experiment(
    pipeline: &SelectionPipeline,
    client: &InferenceClient,
    validation: &Corpus,
) -> Result<EvalReport, PipelineError> {
    if validation.num_classes() != pipeline.train.num_classes() {
        return Err(PipelineError::ClassMismatch {
            got: validation.num_classes(),
            expected: pipeline.train.num_classes(),
        });
    }
    let queries = validation.examples();
    let outcomes: Vec<Mutex<Option<QueryOutcome>>> =
        queries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = client.max_concurrent().min(queries.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let at = next.fetch_add(1, Ordering::Relaxed);
                if at >= queries.len() {
                    break;
                }
                let query = &queries[at];
                let outcome = evaluate_query(pipeline, client, query);
                *outcomes[at].lock().unwrap() = Some(outcome);
            });
        }
    });

    let queries_out: Vec<QueryOutcome> = outcomes
        .into_iter()
        .map(|m| m.into_inner().unwrap().unwrap())
        .collect();

    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for q in &queries_out {
        if let Some(p) = q.predicted {
            preds.push(p);
            golds.push(q.gold);
        }
    }
    let (accuracy, macro_f1) = if preds.is_empty() {
        (0.0, 0.0)
    } else {
        metrics(&preds, &golds, validation.num_classes()).map_err(PipelineError::Eval)?
    };

    let config = ConfigEcho {
        k: pipeline.config.k,
        n: pipeline.config.n,
        lambda: match pipeline.config.damping {
            Damping::Auto => "auto".to_string(),
            Damping::Fixed(v) => format!("{v}"),
        },
        fusion: pipeline.config.fusion,
        fisher_set: pipeline.config.fisher_set,
        model: client.model().to_string(),
    };

    Ok(EvalReport {
        config,
        n_queries: queries_out.len(),
        n_scored: preds.len(),
        partial: preds.len() != queries_out.len(),
        accuracy,
        macro_f1,
        queries: queries_out,
    })
}

fn evaluate_query(
    pipeline: &SelectionPipeline,
    client: &InferenceClient,
    query: &Example,
) -> QueryOutcome {
    let mut outcome = QueryOutcome {
        query_id: query.id,
        gold: query.label,
        predicted: None,
        chosen: Vec::new(),
        lambda: 0.0,
        error: None,
    };
    let attempt = (|| -> Result<usize, PipelineError> {
        let record = pipeline.select(query)?;
        outcome.chosen = record.chosen.iter().map(|s| s.id).collect();
        outcome.lambda = record.lambda;
        let prompt = pipeline.prompt(&record, query)?;
        Ok(client.classify(&prompt, pipeline.train.verbalizers())?)
    })();
    match attempt {
        Ok(predicted) => outcome.predicted = Some(predicted),
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}
