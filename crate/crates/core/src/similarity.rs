//! Embedding access, cosine similarity, and percentile binning of the
//! candidate pool per query.
//!
//! Binning is by rank percentile of the similarity-ranked pool (not by raw
//! similarity intervals), so bins are always non-empty and balanced to within
//! one item. Ties in similarity are broken by ascending example id, which
//! keeps rankings reproducible across runs and platforms.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CandidatePool, Query};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("vector dimensions differ: {got} vs {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("cosine is undefined for an all-zero vector")]
    ZeroVector,
    #[error("no embedding available for \"{0}\"")]
    MissingEmbedding(String),
    #[error("embedding endpoint returned status {status}")]
    EndpointError { status: u16 },
    #[error("embedding transport failed: {0}")]
    Transport(String),
    #[error("cannot read sidecar file {path}: {message}")]
    SidecarUnreadable { path: String, message: String },
    #[error("pool of {pool} examples cannot fill {bins} bins")]
    PoolTooSmall { pool: usize, bins: usize },
}

/// Cosine similarity `u.v / (|u||v|)`, in `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch { got: u.len(), want: v.len() });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Hex SHA-256 of a text, the key under which its embedding is cached and
/// looked up in sidecar files.
pub fn text_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    hex_string(&h.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Where vectors come from.
#[derive(Debug, Clone)]
pub enum EmbeddingMode {
    /// Vectors already present in the pool/query files; nothing to fetch.
    Inline,
    /// A newline-delimited file of `{"text_hash", "vector"}` records.
    Sidecar(PathBuf),
    /// An HTTP endpoint, OpenAI-embeddings shaped.
    Remote(RemoteEndpoint),
}

/// Remote embedding endpoint: POST `{"input": [texts]}`, response
/// `{"data": [{"embedding": [..]}, ..]}` in input order. The bearer token is
/// read from the named environment variable.
#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: String,
    pub token_env: String,
    pub timeout_secs: u64,
}

/// Embedding source: mode plus the pool-wide vector dimension every produced
/// vector must match.
#[derive(Debug, Clone)]
pub struct EmbeddingSource {
    pub mode: EmbeddingMode,
    pub dimension: usize,
}

/// Transport behind the remote mode; injectable so the cache contract can be
/// tested without a live endpoint.
pub trait EmbeddingTransport: Send + Sync {
    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SimilarityError>;
}

struct HttpEmbeddingTransport {
    endpoint: RemoteEndpoint,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingTransport for HttpEmbeddingTransport {
    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SimilarityError> {
        let mut req = ureq::post(&self.endpoint.url)
            .timeout(std::time::Duration::from_secs(self.endpoint.timeout_secs));
        if let Ok(token) = std::env::var(&self.endpoint.token_env) {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req
            .send_json(ureq::json!(EmbeddingRequest { input: texts }))
            .map_err(|e| match e {
                ureq::Error::Status(status, _) => SimilarityError::EndpointError { status },
                ureq::Error::Transport(t) => SimilarityError::Transport(t.to_string()),
            })?;
        let body: EmbeddingResponse = resp
            .into_json()
            .map_err(|e| SimilarityError::Transport(e.to_string()))?;
        if body.data.len() != texts.len() {
            return Err(SimilarityError::Transport(format!(
                "endpoint returned {} vectors for {} inputs",
                body.data.len(),
                texts.len()
            )));
        }
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Resolves texts to vectors for one source, caching remote results by text
/// hash so repeated calls never issue duplicate requests. Reads are lock-free
/// for sidecar/inline; the remote cache serializes writes behind a mutex.
pub struct Embedder {
    dimension: usize,
    backend: EmbedderBackend,
}

enum EmbedderBackend {
    Inline,
    Sidecar(HashMap<String, Vec<f64>>),
    Remote {
        transport: Box<dyn EmbeddingTransport>,
        cache: Mutex<HashMap<String, Vec<f64>>>,
    },
}

#[derive(Deserialize)]
struct SidecarRow {
    text_hash: String,
    vector: Vec<f64>,
}

impl Embedder {
    pub fn new(src: &EmbeddingSource) -> Result<Self, SimilarityError> {
        let backend = match &src.mode {
            EmbeddingMode::Inline => EmbedderBackend::Inline,
            EmbeddingMode::Sidecar(path) => EmbedderBackend::Sidecar(load_sidecar(path)?),
            EmbeddingMode::Remote(endpoint) => EmbedderBackend::Remote {
                transport: Box::new(HttpEmbeddingTransport { endpoint: endpoint.clone() }),
                cache: Mutex::new(HashMap::new()),
            },
        };
        Ok(Self { dimension: src.dimension, backend })
    }

    /// Remote-mode embedder with a caller-supplied transport.
    pub fn with_transport(dimension: usize, transport: Box<dyn EmbeddingTransport>) -> Self {
        Self {
            dimension,
            backend: EmbedderBackend::Remote { transport, cache: Mutex::new(HashMap::new()) },
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// One vector per text, in input order. Inline mode cannot serve texts
    /// (vectors live in the records themselves), so any lookup through it is
    /// a missing embedding.
    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, SimilarityError> {
        match &self.backend {
            EmbedderBackend::Inline => match texts.first() {
                Some(t) => Err(SimilarityError::MissingEmbedding((*t).to_string())),
                None => Ok(Vec::new()),
            },
            EmbedderBackend::Sidecar(map) => texts
                .iter()
                .map(|t| {
                    let v = map
                        .get(&text_hash(t))
                        .ok_or_else(|| SimilarityError::MissingEmbedding((*t).to_string()))?;
                    self.check_dim(v)?;
                    Ok(v.clone())
                })
                .collect(),
            EmbedderBackend::Remote { transport, cache } => {
                let hashes: Vec<String> = texts.iter().map(|t| text_hash(t)).collect();
                let missing: Vec<usize> = {
                    let cache = cache.lock().unwrap();
                    (0..texts.len())
                        .filter(|&i| !cache.contains_key(&hashes[i]))
                        .collect()
                };
                if !missing.is_empty() {
                    // Dedupe identical texts within one batch before fetching.
                    let mut batch: Vec<usize> = Vec::new();
                    let mut seen: HashMap<&str, ()> = HashMap::new();
                    for &i in &missing {
                        if seen.insert(hashes[i].as_str(), ()).is_none() {
                            batch.push(i);
                        }
                    }
                    let fetch_texts: Vec<&str> = batch.iter().map(|&i| texts[i]).collect();
                    let vectors = transport.fetch(&fetch_texts)?;
                    let mut cache = cache.lock().unwrap();
                    for (&i, v) in batch.iter().zip(vectors) {
                        self.check_dim(&v)?;
                        cache.insert(hashes[i].clone(), v);
                    }
                }
                let cache = cache.lock().unwrap();
                Ok(hashes.iter().map(|h| cache[h].clone()).collect())
            }
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), SimilarityError> {
        if v.len() != self.dimension {
            return Err(SimilarityError::DimensionMismatch {
                got: v.len(),
                want: self.dimension,
            });
        }
        Ok(())
    }
}

fn load_sidecar(path: &Path) -> Result<HashMap<String, Vec<f64>>, SimilarityError> {
    let file = File::open(path).map_err(|e| SimilarityError::SidecarUnreadable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SimilarityError::SidecarUnreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: SidecarRow =
            serde_json::from_str(&line).map_err(|e| SimilarityError::SidecarUnreadable {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })?;
        map.insert(row.text_hash, row.vector);
    }
    Ok(map)
}

/// Fills any missing pool/query embeddings from `embedder`, keyed by input
/// text. Inline sources only validate that nothing is missing.
pub fn ensure_embeddings(
    pool: &mut CandidatePool,
    queries: &mut [Query],
    embedder: &Embedder,
) -> Result<(), SimilarityError> {
    let missing_pool: Vec<(String, String)> = pool
        .examples()
        .iter()
        .filter(|ex| ex.embedding.is_none())
        .map(|ex| (ex.id.clone(), ex.input.clone()))
        .collect();
    if !missing_pool.is_empty() {
        let texts: Vec<&str> = missing_pool.iter().map(|(_, t)| t.as_str()).collect();
        let vectors = embedder.embed(&texts)?;
        for ((id, _), v) in missing_pool.iter().zip(vectors) {
            pool.set_embedding(id, v)
                .map_err(|_| SimilarityError::MissingEmbedding(id.clone()))?;
        }
    }
    for q in queries.iter_mut() {
        if q.embedding.is_none() {
            let v = embedder.embed(&[q.input.as_str()])?;
            q.embedding = Some(v.into_iter().next().unwrap());
        }
    }
    Ok(())
}

/// Per-query split of the pool into percentile bins of the similarity
/// ranking. Bin 1 (index 0) holds the most similar slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    pub query_id: String,
    /// Disjoint id lists covering the pool, in rank order within each bin.
    pub bins: Vec<Vec<String>>,
    /// Cosine similarity of every pool example to the query.
    pub similarity: BTreeMap<String, f64>,
}

impl BinPartition {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin(&self, index: usize) -> &[String] {
        &self.bins[index]
    }
}

fn query_embedding(query: &Query) -> Result<&[f64], SimilarityError> {
    query
        .embedding
        .as_deref()
        .ok_or_else(|| SimilarityError::MissingEmbedding(query.id.clone()))
}

/// Cosine similarity of every pool example to the query.
pub fn similarity_scores(
    pool: &CandidatePool,
    query: &Query,
) -> Result<Vec<(String, f64)>, SimilarityError> {
    let qv = query_embedding(query)?;
    pool.examples()
        .iter()
        .map(|ex| {
            let ev = ex
                .embedding
                .as_deref()
                .ok_or_else(|| SimilarityError::MissingEmbedding(ex.id.clone()))?;
            Ok((ex.id.clone(), cosine(ev, qv)?))
        })
        .collect()
}

fn rank_scored(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine never yields NaN")
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Pool ids sorted by descending cosine similarity to the query, ties broken
/// by ascending id.
pub fn similarity_rank(
    pool: &CandidatePool,
    query: &Query,
) -> Result<Vec<String>, SimilarityError> {
    let mut scored = similarity_scores(pool, query)?;
    rank_scored(&mut scored);
    Ok(scored.into_iter().map(|(id, _)| id).collect())
}

/// Splits the ranked pool into `num_bins` contiguous percentile slices. The
/// remainder `|pool| mod num_bins` is spread one extra item over the first
/// bins, so sizes differ by at most 1.
pub fn partition_bins(
    pool: &CandidatePool,
    query: &Query,
    num_bins: usize,
) -> Result<BinPartition, SimilarityError> {
    if pool.len() < num_bins {
        return Err(SimilarityError::PoolTooSmall { pool: pool.len(), bins: num_bins });
    }
    let mut scored = similarity_scores(pool, query)?;
    rank_scored(&mut scored);
    let similarity: BTreeMap<String, f64> = scored.iter().cloned().collect();
    let ranked: Vec<String> = scored.into_iter().map(|(id, _)| id).collect();

    let base = ranked.len() / num_bins;
    let remainder = ranked.len() % num_bins;
    let mut bins = Vec::with_capacity(num_bins);
    let mut start = 0;
    for j in 0..num_bins {
        let size = base + usize::from(j < remainder);
        bins.push(ranked[start..start + size].to_vec());
        start += size;
    }
    Ok(BinPartition { query_id: query.id.clone(), bins, similarity })
}
