//! Inverted-index Okapi BM25 retrieval: relevance scores and the top-N
//! recall set for a query.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{Corpus, Example};

/// Canonical Okapi defaults.
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Inverted index over the corpus retrieval text (S1 plus S2 when present,
/// labels excluded).
pub struct Bm25Index {
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<u32>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

/// Top-N candidates for one query, descending by relevance, ties by
/// ascending example id.
#[derive(Debug, Clone)]
pub struct RecallSet {
    pub query_id: usize,
    /// `(example id, relevance)` pairs.
    pub entries: Vec<(usize, f64)>,
}

impl RecallSet {
    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|&(id, _)| id).collect()
    }
}

/// Lowercase and split on non-alphanumeric runs.
pub fn word_tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_string())
        .collect()
}

fn retrieval_text(example: &Example) -> String {
    match &example.text2 {
        Some(t2) => format!("{} {}", example.text, t2),
        None => example.text.clone(),
    }
}

pub fn build_index(corpus: &Corpus, k1: f64, b: f64) -> Bm25Index {
    let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
    let mut doc_len = Vec::with_capacity(corpus.len());
    for example in corpus.examples() {
        let words = word_tokenize(&retrieval_text(example));
        doc_len.push(words.len() as u32);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for w in words {
            *tf.entry(w).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((example.id, count));
        }
    }
    for list in postings.values_mut() {
        list.sort_unstable_by_key(|&(id, _)| id);
    }
    let n = doc_len.len();
    let avg_len = if n == 0 {
        0.0
    } else {
        doc_len.iter().map(|&l| l as f64).sum::<f64>() / n as f64
    };
    Bm25Index {
        postings,
        doc_len,
        avg_len,
        k1,
        b,
    }
}

impl Bm25Index {
    pub fn n_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_len[doc]
    }

    /// Smoothed idf: `ln((n - df + 0.5) / (df + 0.5) + 1)`, positive for
    /// every indexed term.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, |p| p.len()) as f64;
        let n = self.n_docs() as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_freq(&self, term: &str, doc: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by_key(&doc, |&(id, _)| id)
                    .ok()
                    .map(|at| list[at].1)
            })
            .unwrap_or(0)
    }

    /// Okapi BM25 of one document against query terms; distinct terms each
    /// contribute once, unseen terms contribute 0.
    pub fn score(&self, query_terms: &[String], doc: usize) -> f64 {
        let distinct: BTreeSet<&String> = query_terms.iter().collect();
        let len_ratio = self.doc_len[doc] as f64 / self.avg_len;
        let mut total = 0.0;
        for term in distinct {
            let tf = self.term_freq(term, doc) as f64;
            if tf == 0.0 {
                continue;
            }
            let denom = tf + self.k1 * (1.0 - self.b + self.b * len_ratio);
            total += self.idf(term) * tf * (self.k1 + 1.0) / denom;
        }
        total
    }

    /// The `min(n, n_docs)` highest-scoring documents for the query's
    /// retrieval text. Zero-score documents fill out the set in ascending
    /// id order.
    pub fn recall_top_n(&self, query: &Example, n: usize) -> RecallSet {
        let terms = word_tokenize(&retrieval_text(query));
        let distinct: BTreeSet<String> = terms.into_iter().collect();
        let mut scores = vec![0.0f64; self.n_docs()];
        for term in &distinct {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                let len_ratio = self.doc_len[doc] as f64 / self.avg_len;
                let denom = tf as f64 + self.k1 * (1.0 - self.b + self.b * len_ratio);
                scores[doc] += idf * tf as f64 * (self.k1 + 1.0) / denom;
            }
        }
        let mut order: Vec<usize> = (0..self.n_docs()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        order.truncate(n.min(self.n_docs()));
        RecallSet {
            query_id: query.id,
            entries: order.into_iter().map(|id| (id, scores[id])).collect(),
        }
    }
}
