//! Uniform completion interface over an OpenAI-compatible remote endpoint
//! and a deterministic mock oracle, plus a content-addressed response cache.
//!
//! Every completion carries grid metadata (query, bin, sample, instruction
//! kind, gold output). The remote backend ignores it; the mock oracle keys
//! its pseudo-random draw on it, which is what makes whole-pipeline runs
//! reproducible byte for byte.

pub mod cache;
mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::prompting::InstructionKind;

pub use cache::{cache_key, cached_complete, CompletionCache, CompletionRecord};
pub use mock::{MockOracle, WrongAnswerPolicy};
pub use remote::RemoteConfig;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (retry after {retry_after_secs:?} s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("cache I/O at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("transport failed: {0}")]
    Transport(String),
}

/// Grid coordinates and task context for one completion.
#[derive(Debug, Clone)]
pub struct CompletionMeta<'a> {
    pub query_id: &'a str,
    pub bin_index: usize,
    pub sample_index: usize,
    pub instruction_kind: InstructionKind,
    pub gold_output: &'a str,
}

/// Derives an independent 64-bit stream seed for a grid cell from the run
/// seed, a domain tag, and the cell coordinates. SHA-256 based, so streams
/// for distinct cells or domains never collide in practice and results do
/// not depend on evaluation order.
pub fn derive_cell_seed(
    base: u64,
    domain: &str,
    query_id: &str,
    bin_index: usize,
    sample_index: usize,
) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update((query_id.len() as u64).to_le_bytes());
    h.update(query_id.as_bytes());
    h.update((bin_index as u64).to_le_bytes());
    h.update((sample_index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Backend selection: a live endpoint or the deterministic oracle.
#[derive(Debug, Clone)]
pub enum BackendConfig {
    Remote(RemoteConfig),
    Mock(MockOracle),
}

enum BackendImpl {
    Remote(remote::RemoteClient),
    Mock(MockOracle),
}

/// A validated completion backend with an invocation counter.
pub struct Backend {
    imp: BackendImpl,
    calls: AtomicU64,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self, ModelError> {
        let imp = match config {
            BackendConfig::Remote(cfg) => {
                cfg.validate()?;
                BackendImpl::Remote(remote::RemoteClient::new(cfg))
            }
            BackendConfig::Mock(oracle) => {
                oracle.validate()?;
                BackendImpl::Mock(oracle)
            }
        };
        Ok(Self { imp, calls: AtomicU64::new(0) })
    }

    /// Completes one prompt. Remote backends retry with exponential backoff
    /// (honoring rate-limit hints) up to their configured attempt budget; the
    /// mock oracle answers from its per-bin success probabilities.
    pub fn complete(&self, prompt: &str, meta: &CompletionMeta) -> Result<String, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.imp {
            BackendImpl::Remote(client) => client.complete(prompt),
            BackendImpl::Mock(oracle) => oracle.complete(meta),
        }
    }

    /// Number of completions actually issued (cache hits never reach here).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Stable identifier recorded in reports and cache records.
    pub fn id(&self) -> String {
        match &self.imp {
            BackendImpl::Remote(client) => format!("remote:{}", client.config().model_name),
            BackendImpl::Mock(_) => "mock".to_string(),
        }
    }

    /// Worker count the evaluation grid may use against this backend.
    pub fn parallelism(&self) -> usize {
        match &self.imp {
            BackendImpl::Remote(client) => client.config().max_inflight.max(1),
            // The oracle is pure computation; threads would only add overhead.
            BackendImpl::Mock(_) => 1,
        }
    }

    /// (model name, temperature, max_tokens) as they enter the cache key.
    pub fn cache_identity(&self) -> (String, f64, u32) {
        match &self.imp {
            BackendImpl::Remote(client) => {
                let cfg = client.config();
                (cfg.model_name.clone(), cfg.temperature, cfg.max_tokens)
            }
            BackendImpl::Mock(_) => ("mock".to_string(), 0.0, 0),
        }
    }
}
