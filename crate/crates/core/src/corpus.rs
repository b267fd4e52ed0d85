//! Dataset loading, demonstration templates, prompt assembly, and the
//! corpus-wide target-length policy.
//!
//! Dataset files are line-delimited JSON records
//! `{"text": str, "text2": str?, "label": str}` where `label` is a
//! verbalizer string mapped to a class index on load.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::tokenizer::BpeVocab;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: malformed record: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path} line {line}: unknown label {label:?}, expected one of {expected:?}")]
    UnknownLabel {
        path: String,
        line: usize,
        label: String,
        expected: Vec<String>,
    },
    #[error("dataset {path} contains no examples")]
    Empty { path: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("render error: {0}")]
    Render(String),
}

/// One training or validation instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    /// Position in dataset file order, contiguous from 0.
    pub id: usize,
    pub text: String,
    /// Second sentence for sentence-pair tasks.
    pub text2: Option<String>,
    /// Class index into the verbalizer list.
    pub label: usize,
}

/// An ordered dataset with its label surface forms.
#[derive(Debug, Clone)]
pub struct Corpus {
    examples: Vec<Example>,
    verbalizers: Vec<String>,
}

impl Corpus {
    pub fn new(examples: Vec<Example>, verbalizers: Vec<String>) -> Result<Self, CorpusError> {
        check_distinct(&verbalizers)?;
        for e in &examples {
            if e.label >= verbalizers.len() {
                return Err(CorpusError::Schema(format!(
                    "example {} has label {} but only {} verbalizers are declared",
                    e.id,
                    e.label,
                    verbalizers.len()
                )));
            }
        }
        Ok(Self {
            examples,
            verbalizers,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.verbalizers.len()
    }

    pub fn verbalizers(&self) -> &[String] {
        &self.verbalizers
    }
}

/// Declares how a dataset's records map onto classes.
#[derive(Debug, Clone)]
pub struct Schema {
    pub name: String,
    /// Sentence-pair task: records carry `text2` and templates carry `[S2]`.
    pub pair: bool,
    pub verbalizers: Vec<String>,
}

impl Schema {
    pub fn new(name: &str, pair: bool, verbalizers: Vec<String>) -> Result<Self, CorpusError> {
        check_distinct(&verbalizers)?;
        if verbalizers.is_empty() {
            return Err(CorpusError::Schema("schema declares no verbalizers".into()));
        }
        Ok(Self {
            name: name.to_string(),
            pair,
            verbalizers,
        })
    }

    /// The five benchmark schemas, label surface forms per their templates.
    pub fn builtin(name: &str) -> Option<Self> {
        let (pair, verbalizers): (bool, &[&str]) = match name {
            "sick" => (true, &["True", "Not sure", "False"]),
            "cola" => (false, &["unacceptable", "acceptable"]),
            "ethos-disability" => (false, &["False", "True"]),
            "tweet-feminist" | "tweet-hillary" => (false, &["none", "against", "favor"]),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            pair,
            verbalizers: verbalizers.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Default minimal template for a builtin schema.
    pub fn builtin_template(name: &str) -> Option<Template> {
        let body = match name {
            "sick" => "[S1] The question is: [S2] True or False? Answer: [Label]",
            "cola" => "Review: [S1] Acceptability: [Label]",
            "ethos-disability" => {
                "There is a hate based on disability in [S1] True or False? Answer: [Label]"
            }
            "tweet-feminist" | "tweet-hillary" => "Tweet: [S1] Sentiment: [Label]",
            _ => return None,
        };
        Some(Template::new(body, " "))
    }
}

fn check_distinct(verbalizers: &[String]) -> Result<(), CorpusError> {
    for (i, v) in verbalizers.iter().enumerate() {
        if verbalizers[..i].contains(v) {
            return Err(CorpusError::Schema(format!("duplicate verbalizer {v:?}")));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    #[serde(default)]
    text2: Option<String>,
    label: String,
}

/// Load a line-delimited dataset file, assigning ids in file order.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Corpus, CorpusError> {
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;

    let mut examples = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: display.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        if record.text.is_empty() {
            return Err(CorpusError::Parse {
                path: display.clone(),
                line: line_no,
                message: "\"text\" must be non-empty".into(),
            });
        }
        if schema.pair && record.text2.is_none() {
            return Err(CorpusError::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("schema {:?} requires \"text2\"", schema.name),
            });
        }
        let label = schema
            .verbalizers
            .iter()
            .position(|v| *v == record.label)
            .ok_or_else(|| CorpusError::UnknownLabel {
                path: display.clone(),
                line: line_no,
                label: record.label.clone(),
                expected: schema.verbalizers.clone(),
            })?;
        examples.push(Example {
            id: examples.len(),
            text: record.text,
            text2: record.text2,
            label,
        });
    }
    if examples.is_empty() {
        return Err(CorpusError::Empty { path: display });
    }
    Corpus::new(examples, schema.verbalizers.clone())
}

/// Demonstration template with `[S1]`, optional `[S2]`, and `[Label]`
/// placeholders; `separator` sits between rendered demonstrations and
/// before the query.
#[derive(Debug, Clone)]
pub struct Template {
    pub body: String,
    pub separator: String,
}

impl Template {
    pub fn new(body: &str, separator: &str) -> Self {
        Self {
            body: body.to_string(),
            separator: separator.to_string(),
        }
    }

    /// `[S1]` and `[Label]` exactly once; `[S2]` exactly once iff `pair`.
    pub fn validate(&self, pair: bool) -> Result<(), CorpusError> {
        let count = |needle: &str| self.body.matches(needle).count();
        if count("[S1]") != 1 {
            return Err(CorpusError::Template(
                "template body must contain [S1] exactly once".into(),
            ));
        }
        if count("[Label]") != 1 {
            return Err(CorpusError::Template(
                "template body must contain [Label] exactly once".into(),
            ));
        }
        let s2 = count("[S2]");
        if pair && s2 != 1 {
            return Err(CorpusError::Template(
                "sentence-pair template must contain [S2] exactly once".into(),
            ));
        }
        if !pair && s2 != 0 {
            return Err(CorpusError::Template(
                "template contains [S2] but the schema is single-sentence".into(),
            ));
        }
        Ok(())
    }
}

/// Template config file: `{"body": str, "separator": str, "verbalizers": [str...]}`.
#[derive(Deserialize)]
struct TemplateFile {
    body: String,
    #[serde(default = "default_separator")]
    separator: String,
    verbalizers: Vec<String>,
}

fn default_separator() -> String {
    " ".to_string()
}

pub fn load_template(path: &Path) -> Result<(Template, Vec<String>), CorpusError> {
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let file: TemplateFile = serde_json::from_str(&content)
        .map_err(|e| CorpusError::Template(format!("{display}: {e}")))?;
    check_distinct(&file.verbalizers)?;
    Ok((
        Template::new(&file.body, &file.separator),
        file.verbalizers,
    ))
}

/// Render one labeled demonstration: `[S1]`/`[S2]` from the example,
/// `[Label]` from its verbalizer.
pub fn render_example(
    template: &Template,
    example: &Example,
    verbalizers: &[String],
) -> Result<String, CorpusError> {
    let verbalizer = verbalizers.get(example.label).ok_or_else(|| {
        CorpusError::Render(format!(
            "example {} label {} has no verbalizer",
            example.id, example.label
        ))
    })?;
    render(template, example, verbalizer)
}

/// Render the query form: everything from the label slot onward is dropped
/// and trailing whitespace trimmed, so the verbalizer can be appended by
/// the scorer.
pub fn render_query(template: &Template, example: &Example) -> Result<String, CorpusError> {
    let prefix = match template.body.find("[Label]") {
        Some(at) => &template.body[..at],
        None => template.body.as_str(),
    };
    let truncated = Template::new(prefix, &template.separator);
    Ok(render(&truncated, example, "")?.trim_end().to_string())
}

fn render(template: &Template, example: &Example, label_text: &str) -> Result<String, CorpusError> {
    let mut out = template.body.replace("[S1]", &example.text);
    if template.body.contains("[S2]") {
        let text2 = example.text2.as_deref().ok_or_else(|| {
            CorpusError::Render(format!(
                "template has [S2] but example {} has no second sentence",
                example.id
            ))
        })?;
        out = out.replace("[S2]", text2);
    }
    Ok(out.replace("[Label]", label_text))
}

/// Separator-joined demonstration renders, then the query render. Zero
/// demonstrations gives the zero-shot prompt (query render only).
pub fn build_prompt(
    template: &Template,
    demos: &[&Example],
    query: &Example,
    verbalizers: &[String],
) -> Result<String, CorpusError> {
    let mut parts = Vec::with_capacity(demos.len() + 1);
    for demo in demos {
        parts.push(render_example(template, demo, verbalizers)?);
    }
    parts.push(render_query(template, query)?);
    Ok(parts.join(&template.separator))
}

/// Uniform token length used for meta-gradient inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthPolicy {
    pub target_len: usize,
}

/// Half the mean token count of the label-free renders, rounded half-up and
/// clamped to at least 1.
pub fn length_policy(
    corpus: &Corpus,
    template: &Template,
    vocab: &BpeVocab,
) -> Result<LengthPolicy, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty {
            path: "<in-memory corpus>".into(),
        });
    }
    let mut total = 0usize;
    for example in corpus.examples() {
        total += vocab.encode(&render_query(template, example)?).len();
    }
    let mean = total as f64 / corpus.len() as f64;
    let target_len = ((0.5 * mean + 0.5).floor() as usize).max(1);
    Ok(LengthPolicy { target_len })
}
