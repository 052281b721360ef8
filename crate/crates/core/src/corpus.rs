//! Data model and ingestion for candidate pools, query sets, and task specs.
//!
//! Pools and query sets are newline-delimited JSON records (one record per
//! line), which keeps large files streamable and diff-friendly. Task specs are
//! a single JSON document. Pools and query sets are immutable after load and
//! safe to share across threads.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading or validating pools, query sets, and task specs.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {row}: malformed record: {message}")]
    MalformedRecord { row: usize, message: String },
    #[error("line {row}: missing field \"{field}\"")]
    MissingField { row: usize, field: &'static str },
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("line {row}: embedding dimension {got}, expected {want}")]
    DimensionMismatch { row: usize, got: usize, want: usize },
    #[error("example \"{id}\": output \"{output}\" is not in the label space")]
    LabelOutsideSpace { id: String, output: String },
    #[error("invalid task spec: {0}")]
    InvalidTaskSpec(String),
}

/// A candidate demonstration: an (input, output) pair, optionally embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub input: String,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// The candidate pool examples are drawn from, with a pool-wide embedding
/// dimension fixed by the first embedded record.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    examples: Vec<Example>,
    index: BTreeMap<String, usize>,
    embedding_dim: Option<usize>,
}

impl CandidatePool {
    /// Builds a pool from in-memory examples, enforcing the same invariants as
    /// [`load_pool`]: unique ids and a consistent embedding dimension.
    pub fn new(examples: Vec<Example>, expected_dim: Option<usize>) -> Result<Self, CorpusError> {
        let mut index = BTreeMap::new();
        let mut dim = expected_dim;
        for (i, ex) in examples.iter().enumerate() {
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(ex.id.clone()));
            }
            if let Some(v) = &ex.embedding {
                match dim {
                    None => dim = Some(v.len()),
                    Some(want) if v.len() != want => {
                        return Err(CorpusError::DimensionMismatch {
                            row: i + 1,
                            got: v.len(),
                            want,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            examples,
            index,
            embedding_dim: dim,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Embedding dimension declared by the first embedded record, if any.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    /// Replaces the embedding of `id`, fixing the pool dimension if unset.
    pub fn set_embedding(&mut self, id: &str, vector: Vec<f64>) -> Result<(), CorpusError> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| CorpusError::DuplicateId(id.to_string()))?;
        match self.embedding_dim {
            None => self.embedding_dim = Some(vector.len()),
            Some(want) if vector.len() != want => {
                return Err(CorpusError::DimensionMismatch {
                    row: i + 1,
                    got: vector.len(),
                    want,
                })
            }
            _ => {}
        }
        self.examples[i].embedding = Some(vector);
        Ok(())
    }

    /// Checks that every output is a member of the label space. Pools backing
    /// classification tasks must pass this before scoring.
    pub fn validate_labels(&self, labels: &LabelSpace) -> Result<(), CorpusError> {
        for ex in &self.examples {
            if !labels.contains(&ex.output) {
                return Err(CorpusError::LabelOutsideSpace {
                    id: ex.id.clone(),
                    output: ex.output.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Ordered set of distinct class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Result<Self, CorpusError> {
        if labels.is_empty() {
            return Err(CorpusError::InvalidTaskSpec(
                "label space must be non-empty".into(),
            ));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(CorpusError::InvalidTaskSpec(format!(
                    "duplicate label \"{l}\""
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Whether the task is a classification over a fixed label space or free-form
/// generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Generation,
}

/// The performance measure used to score completions, mirrored by
/// [`crate::metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Accuracy,
    ExactMatch,
    Bleu,
    QdmrGed,
    Gsm8kFac,
    Gsm8kRfc,
}

/// Task description: kind, label space, measure, shot count, and bin count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_space: Option<LabelSpace>,
    pub measure: Measure,
    pub k_shots: usize,
    #[serde(default = "default_num_bins")]
    pub num_bins: usize,
}

fn default_num_bins() -> usize {
    10
}

impl TaskSpec {
    /// Enforces the structural invariants: a label space iff classification,
    /// k_shots >= 1, num_bins >= 2.
    pub fn validate(&self) -> Result<(), CorpusError> {
        match (self.kind, &self.label_space) {
            (TaskKind::Classification, None) => {
                return Err(CorpusError::InvalidTaskSpec(
                    "classification task requires a label_space".into(),
                ))
            }
            (TaskKind::Generation, Some(_)) => {
                return Err(CorpusError::InvalidTaskSpec(
                    "generation task must not declare a label_space".into(),
                ))
            }
            _ => {}
        }
        if let Some(ls) = &self.label_space {
            // Re-run the LabelSpace checks; serde bypasses the constructor.
            LabelSpace::new(ls.labels.clone())?;
        }
        if self.k_shots < 1 {
            return Err(CorpusError::InvalidTaskSpec("k_shots must be >= 1".into()));
        }
        if self.num_bins < 2 {
            return Err(CorpusError::InvalidTaskSpec("num_bins must be >= 2".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::UnreadableFile {
            path: path.display().to_string(),
            source,
        })?;
        let spec: TaskSpec = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CorpusError::InvalidTaskSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A held-out query with its gold output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub input: String,
    pub gold: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// The set of test queries the bin scores are averaged over.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuerySet {
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn new(queries: Vec<Query>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for q in &queries {
            if !seen.insert(q.id.as_str()) {
                return Err(CorpusError::DuplicateId(q.id.clone()));
            }
        }
        Ok(Self { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Query> {
        self.queries.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }

    pub fn into_queries(self) -> Vec<Query> {
        self.queries
    }
}

// Raw rows as they appear on disk. Optional fields are checked by hand so a
// missing field can name the offending row instead of failing opaquely.
#[derive(Deserialize)]
struct PoolRow {
    id: Option<String>,
    input: Option<String>,
    output: Option<String>,
    embedding: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct QueryRow {
    id: Option<String>,
    input: Option<String>,
    gold: Option<String>,
    embedding: Option<Vec<f64>>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::UnreadableFile {
            path: path.display().to_string(),
            source,
        })?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

/// Loads a candidate pool from a newline-delimited JSON file with fields
/// `{"id", "input", "output", "embedding"?}`.
///
/// All embedded rows must share one dimension; `expected_dim`, when given,
/// pins it. Duplicate ids and missing fields are rejected with the row number.
pub fn load_pool(path: &Path, expected_dim: Option<usize>) -> Result<CandidatePool, CorpusError> {
    let mut examples = Vec::new();
    let mut dim = expected_dim;
    for (row, line) in read_lines(path)? {
        let raw: PoolRow = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedRecord { row, message: e.to_string() })?;
        let id = raw.id.ok_or(CorpusError::MissingField { row, field: "id" })?;
        let input = raw
            .input
            .ok_or(CorpusError::MissingField { row, field: "input" })?;
        let output = raw
            .output
            .ok_or(CorpusError::MissingField { row, field: "output" })?;
        if let Some(v) = &raw.embedding {
            match dim {
                None => dim = Some(v.len()),
                Some(want) if v.len() != want => {
                    return Err(CorpusError::DimensionMismatch { row, got: v.len(), want })
                }
                _ => {}
            }
        }
        examples.push(Example {
            id,
            input,
            output,
            embedding: raw.embedding,
        });
    }
    CandidatePool::new(examples, dim)
}

/// Serializes a pool back to the newline-delimited record format.
pub fn save_pool(pool: &CandidatePool, mut out: impl Write) -> std::io::Result<()> {
    for ex in pool.examples() {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads a query set from a newline-delimited JSON file with fields
/// `{"id", "input", "gold", "embedding"?}`. An empty file is a valid, empty
/// query set (warned, since a run over it is vacuous).
pub fn load_queries(path: &Path) -> Result<QuerySet, CorpusError> {
    let mut queries = Vec::new();
    for (row, line) in read_lines(path)? {
        let raw: QueryRow = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedRecord { row, message: e.to_string() })?;
        queries.push(Query {
            id: raw.id.ok_or(CorpusError::MissingField { row, field: "id" })?,
            input: raw
                .input
                .ok_or(CorpusError::MissingField { row, field: "input" })?,
            gold: raw
                .gold
                .ok_or(CorpusError::MissingField { row, field: "gold" })?,
            embedding: raw.embedding,
        });
    }
    if queries.is_empty() {
        log::warn!("query file {} is empty", path.display());
    }
    QuerySet::new(queries)
}

/// Uniform without-replacement sample of `min(n, |qs|)` queries, deterministic
/// per seed. Asking for more queries than exist returns all of them, shuffled.
pub fn sample_queries(qs: &QuerySet, n: usize, seed: u64) -> QuerySet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<Query> = qs.queries().to_vec();
    let take = n.min(pool.len());
    let (sampled, _) = pool.partial_shuffle(&mut rng, take);
    QuerySet {
        queries: sampled.to_vec(),
    }
}
