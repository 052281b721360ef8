//! Okapi BM25 scoring over the candidate pool's input texts.
//!
//! Tokenization is lowercase with splits on runs of non-alphanumeric
//! characters. IDF uses the non-negative form `ln(1 + (N - df + 0.5) /
//! (df + 0.5))`, so scores are always >= 0 and disjoint vocabularies score
//! exactly 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, Query};

use super::{check_k, DemoSet, SelectorError, SelectorKind};

/// Okapi parameters. k1 saturates term frequency, b scales length
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), SelectorError> {
        if !self.k1.is_finite() || self.k1 <= 0.0 {
            return Err(SelectorError::BadParams(format!("k1 = {} must be > 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(SelectorError::BadParams(format!("b = {} must be in [0, 1]", self.b)));
        }
        Ok(())
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Document count, per-term document frequency, and average document length
/// over a tokenized corpus.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pub num_docs: usize,
    pub avg_len: f64,
    doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_docs(docs: &[Vec<String>]) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut total_len = 0usize;
        for doc in docs {
            total_len += doc.len();
            let mut seen = std::collections::HashSet::new();
            for t in doc {
                if seen.insert(t.as_str()) {
                    *doc_freq.entry(t.clone()).or_default() += 1;
                }
            }
        }
        let num_docs = docs.len();
        let avg_len = if num_docs == 0 { 0.0 } else { total_len as f64 / num_docs as f64 };
        Self { num_docs, avg_len, doc_freq }
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Okapi BM25 relevance of one document to the query: the sum over query
/// tokens of `idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avg_len))`.
pub fn bm25_score(
    query_tokens: &[String],
    doc_tokens: &[String],
    stats: &CorpusStats,
    params: &Bm25Params,
) -> f64 {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in doc_tokens {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    let len_norm = if stats.avg_len > 0.0 {
        1.0 - params.b + params.b * doc_tokens.len() as f64 / stats.avg_len
    } else {
        1.0
    };
    let mut score = 0.0;
    for term in query_tokens {
        let f = tf.get(term.as_str()).copied().unwrap_or(0) as f64;
        if f == 0.0 {
            continue;
        }
        score += stats.idf(term) * f * (params.k1 + 1.0) / (f + params.k1 * len_norm);
    }
    score
}

/// Top-k examples by BM25 relevance of their inputs to the query input,
/// descending, ties by ascending id.
pub fn select_bm25(
    pool: &CandidatePool,
    query: &Query,
    k: usize,
    params: &Bm25Params,
) -> Result<DemoSet, SelectorError> {
    check_k(k, pool.len())?;
    params.validate()?;
    let docs: Vec<Vec<String>> = pool.examples().iter().map(|e| tokenize(&e.input)).collect();
    let stats = CorpusStats::from_docs(&docs);
    let query_tokens = tokenize(&query.input);
    let mut scored: Vec<(String, f64)> = pool
        .examples()
        .iter()
        .zip(&docs)
        .map(|(e, doc)| (e.id.clone(), bm25_score(&query_tokens, doc, &stats, params)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("bm25 scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(DemoSet {
        demos: scored.into_iter().take(k).map(|(id, _)| id).collect(),
        source: SelectorKind::Bm25,
        seed: 0,
    })
}
