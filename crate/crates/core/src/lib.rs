//! Demonstration selection for in-context learning: BM25 recall of
//! candidate examples, reranking by a Fisher-approximated influence
//! function computed from first-layer meta-gradients, prompt assembly, and
//! evaluation against a completion endpoint with echoed log-probabilities.

pub mod corpus;
pub mod eval;
pub mod fixtures;
pub mod influence;
pub mod model_slice;
pub mod pipeline;
pub mod recall;
pub mod stub;
pub mod tokenizer;

pub use corpus::{Corpus, Example, LengthPolicy, Schema, Template};
pub use eval::{InferenceClient, LabelScore};
pub use influence::{Damping, FisherMatrix, Fusion, ScoredExample, SelectionResult};
pub use model_slice::{MetaGradient, ModelSlice, Representation};
pub use pipeline::{
    EvalReport, FisherSet, PipelineConfig, SelectionPipeline, SelectionRecord,
};
pub use recall::{Bm25Index, RecallSet};
pub use tokenizer::{BpeVocab, TokenSeq};
