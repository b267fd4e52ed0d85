//! Label scoring against a completion endpoint that echoes per-token
//! log-probabilities, verbalizer-argmax classification, and accuracy /
//! macro-F1 metrics.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("verbalizer must be non-empty")]
    EmptyVerbalizer,
    #[error("classification needs at least 2 verbalizers, got {0}")]
    TooFewVerbalizers(usize),
    #[error("endpoint {endpoint}: {message} (after {attempts} attempt(s))")]
    Endpoint {
        endpoint: String,
        message: String,
        attempts: u32,
    },
    #[error("endpoint does not echo token log-probabilities: {0}")]
    Capability(String),
    #[error("preds/golds length mismatch: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("metrics need at least one prediction")]
    NoPredictions,
    #[error("class index {0} out of range for {1} classes")]
    ClassOutOfRange(usize, usize),
}

/// Log-likelihood of one verbalizer continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScore {
    pub label: usize,
    pub loglik: f64,
}

/// HTTP client for a completion endpoint supporting
/// `{model, prompt, max_new_tokens: 0, echo: true, logprobs: true}`.
pub struct InferenceClient {
    endpoint: String,
    model: String,
    max_retries: u32,
    max_concurrent: usize,
    agent: ureq::Agent,
}

impl InferenceClient {
    pub fn new(endpoint: &str, model: &str) -> Self {
        Self::with_limits(endpoint, model, Duration::from_secs(60), 2, 4)
    }

    pub fn with_limits(
        endpoint: &str,
        model: &str,
        timeout: Duration,
        max_retries: u32,
        max_concurrent: usize,
    ) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            max_retries,
            max_concurrent: max_concurrent.max(1),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    /// Retries transport failures and 5xx; other statuses fail immediately.
    fn post(&self, body: &Value) -> Result<Value, EvalError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = self.agent.post(&self.endpoint).send_json(body.clone());
            let retryable = match &result {
                Ok(_) => false,
                Err(ureq::Error::Status(code, _)) => *code >= 500,
                Err(ureq::Error::Transport(_)) => true,
            };
            match result {
                Ok(response) => {
                    return response.into_json().map_err(|e| EvalError::Endpoint {
                        endpoint: self.endpoint.clone(),
                        message: format!("invalid JSON response: {e}"),
                        attempts,
                    })
                }
                Err(err) if !retryable || attempts > self.max_retries => {
                    return Err(EvalError::Endpoint {
                        endpoint: self.endpoint.clone(),
                        message: err.to_string(),
                        attempts,
                    })
                }
                Err(_) => continue,
            }
        }
    }

    /// Submit `prompt + " " + verbalizer` and sum the log-probabilities of
    /// the tokens covering the verbalizer continuation (those starting at or
    /// after the prompt/label boundary).
    pub fn score_label(&self, prompt: &str, verbalizer: &str) -> Result<f64, EvalError> {
        if prompt.is_empty() {
            return Err(EvalError::EmptyPrompt);
        }
        if verbalizer.is_empty() {
            return Err(EvalError::EmptyVerbalizer);
        }
        let full = format!("{prompt} {verbalizer}");
        let body = json!({
            "model": self.model,
            "prompt": full,
            "max_new_tokens": 0,
            "echo": true,
            "logprobs": true,
        });
        let response = self.post(&body)?;

        let logprobs = response
            .pointer("/choices/0/logprobs")
            .ok_or_else(|| EvalError::Capability("response has no logprobs block".into()))?;
        let offsets = array_field(logprobs, "text_offset")?;
        let token_logprobs = array_field(logprobs, "token_logprobs")?;
        if offsets.len() != token_logprobs.len() {
            return Err(EvalError::Capability(
                "text_offset and token_logprobs lengths differ".into(),
            ));
        }

        let boundary = prompt.len() as u64;
        let mut total = 0.0;
        let mut covered = 0;
        for (offset, lp) in offsets.iter().zip(token_logprobs) {
            let Some(offset) = offset.as_u64() else {
                return Err(EvalError::Capability("non-integer text offset".into()));
            };
            if offset < boundary {
                continue;
            }
            let Some(lp) = lp.as_f64() else {
                return Err(EvalError::Capability(format!(
                    "missing log-probability for echoed token at offset {offset}"
                )));
            };
            total += lp;
            covered += 1;
        }
        if covered == 0 {
            return Err(EvalError::Capability(
                "no echoed tokens cover the verbalizer continuation".into(),
            ));
        }
        Ok(total)
    }

    pub fn score_labels(
        &self,
        prompt: &str,
        verbalizers: &[String],
    ) -> Result<Vec<LabelScore>, EvalError> {
        verbalizers
            .iter()
            .enumerate()
            .map(|(label, v)| {
                Ok(LabelScore {
                    label,
                    loglik: self.score_label(prompt, v)?,
                })
            })
            .collect()
    }

    /// Argmax over verbalizer log-likelihoods, ties to the lowest index.
    pub fn classify(&self, prompt: &str, verbalizers: &[String]) -> Result<usize, EvalError> {
        if verbalizers.len() < 2 {
            return Err(EvalError::TooFewVerbalizers(verbalizers.len()));
        }
        let scores = self.score_labels(prompt, verbalizers)?;
        Ok(argmax(&scores))
    }
}

pub fn argmax(scores: &[LabelScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.loglik > scores[best].loglik {
            best = i;
        }
    }
    scores[best].label
}

fn array_field<'a>(value: &'a Value, name: &str) -> Result<&'a Vec<Value>, EvalError> {
    value
        .get(name)
        .and_then(Value::as_array)
        .ok_or_else(|| EvalError::Capability(format!("logprobs block lacks {name:?} array")))
}

/// Accuracy and macro-F1. Per-class F1 is `2PR/(P+R)` (0 when P+R = 0);
/// classes absent from both predictions and golds are excluded from the
/// macro mean.
pub fn metrics(
    preds: &[usize],
    golds: &[usize],
    num_classes: usize,
) -> Result<(f64, f64), EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    for &v in preds.iter().chain(golds) {
        if v >= num_classes {
            return Err(EvalError::ClassOutOfRange(v, num_classes));
        }
    }

    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let accuracy = correct as f64 / preds.len() as f64;

    let mut f1_sum = 0.0;
    let mut f1_count = 0usize;
    for class in 0..num_classes {
        let tp = preds
            .iter()
            .zip(golds)
            .filter(|&(&p, &g)| p == class && g == class)
            .count() as f64;
        let pred_pos = preds.iter().filter(|&&p| p == class).count() as f64;
        let gold_pos = golds.iter().filter(|&&g| g == class).count() as f64;
        if pred_pos == 0.0 && gold_pos == 0.0 {
            continue;
        }
        let precision = if pred_pos > 0.0 { tp / pred_pos } else { 0.0 };
        let recall = if gold_pos > 0.0 { tp / gold_pos } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        f1_count += 1;
    }
    Ok((accuracy, f1_sum / f1_count as f64))
}
