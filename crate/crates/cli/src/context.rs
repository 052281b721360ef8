//! Shared plumbing for the subcommands: input loading, run fingerprinting,
//! the advisory run lock, and artifact I/O.
//!
//! Every artifact embeds the run's config hash, a digest over the input file
//! contents and the protocol knobs. `report` refuses to render artifacts with
//! differing hashes, which catches accidental mixing of runs in one
//! directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nice_core::corpus::{load_pool, load_queries, CandidatePool, QuerySet, TaskKind, TaskSpec};
use nice_core::model::{Backend, BackendConfig, MockOracle, RemoteConfig};
use nice_core::prompting::{
    build_instruction, builtin_fragments, Instruction, InstructionFragments, InstructionKind,
    LabelMode,
};
use nice_core::selectors::SelectorKind;
use nice_core::similarity::{ensure_embeddings, Embedder, EmbeddingMode, EmbeddingSource, RemoteEndpoint};

use crate::args::{BackendArg, BackendArgs, InputArgs, InstructionArgs, RunArgs};

/// Exit-code classification: 1 for bad inputs, 2 for failures at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Validation,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub failure: Failure,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self.failure {
            Failure::Validation => 1,
            Failure::Runtime => 2,
        }
    }
}

pub fn validation(e: impl Into<anyhow::Error>) -> CliError {
    CliError { failure: Failure::Validation, source: e.into() }
}

pub fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError { failure: Failure::Runtime, source: e.into() }
}

pub type CliResult<T> = Result<T, CliError>;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Validated inputs plus everything needed to fingerprint the run.
pub struct Inputs {
    pub task: TaskSpec,
    pub pool: CandidatePool,
    pub queries: QuerySet,
    task_digest: String,
    pool_digest: String,
    queries_digest: String,
    embeddings_digest: Option<String>,
}

impl Inputs {
    pub fn load(args: &InputArgs) -> CliResult<Self> {
        let task = TaskSpec::load(&args.task).map_err(validation)?;
        let pool = load_pool(&args.pool, args.embed_dim).map_err(validation)?;
        if task.kind == TaskKind::Classification {
            let labels = task.label_space.as_ref().expect("validated");
            pool.validate_labels(labels).map_err(validation)?;
        }
        let queries = load_queries(&args.queries).map_err(validation)?;

        let mut inputs = Self {
            task_digest: file_digest(&args.task).map_err(validation)?,
            pool_digest: file_digest(&args.pool).map_err(validation)?,
            queries_digest: file_digest(&args.queries).map_err(validation)?,
            embeddings_digest: match &args.embeddings {
                Some(p) => Some(file_digest(p).map_err(validation)?),
                None => None,
            },
            task,
            pool,
            queries,
        };
        inputs.fill_embeddings(args)?;
        Ok(inputs)
    }

    /// Resolves missing vectors from the sidecar or remote source, if one is
    /// configured. Inline pools are used as-is; completeness is checked where
    /// vectors are consumed.
    fn fill_embeddings(&mut self, args: &InputArgs) -> CliResult<()> {
        let mode = if let Some(path) = &args.embeddings {
            EmbeddingMode::Sidecar(path.clone())
        } else if let Some(url) = &args.embed_url {
            EmbeddingMode::Remote(RemoteEndpoint {
                url: url.clone(),
                token_env: args.embed_token_env.clone(),
                timeout_secs: 60,
            })
        } else {
            return Ok(());
        };
        let dimension = args
            .embed_dim
            .or(self.pool.embedding_dim())
            .ok_or_else(|| validation(anyhow!("--embed-dim is required when the pool carries no vectors")))?;
        let embedder = Embedder::new(&EmbeddingSource { mode, dimension }).map_err(validation)?;
        let mut queries = std::mem::take(&mut self.queries).into_queries();
        ensure_embeddings(&mut self.pool, &mut queries, &embedder).map_err(validation)?;
        self.queries = QuerySet::new(queries).map_err(validation)?;
        Ok(())
    }

    pub fn missing_embeddings(&self) -> usize {
        self.pool.examples().iter().filter(|e| e.embedding.is_none()).count()
            + self.queries.iter().filter(|q| q.embedding.is_none()).count()
    }
}

/// The sampling-determining knobs of a run bundle; its digest is the config
/// hash every artifact embeds. Arm labels that vary within a comparison
/// (instruction kind, selector, label mode, backend) are recorded on each
/// artifact instead, so one run directory can hold a whole comparison.
#[derive(Debug, Clone, Serialize)]
pub struct RunFingerprint {
    pub task_file: String,
    pub pool_file: String,
    pub queries_file: String,
    pub embeddings_file: Option<String>,
    pub seed: u64,
    pub k_shots: usize,
    pub num_bins: usize,
    pub samples_per_bin: usize,
    pub num_queries: usize,
}

impl RunFingerprint {
    pub fn new(inputs: &Inputs, run: &RunArgs) -> Self {
        Self {
            task_file: inputs.task_digest.clone(),
            pool_file: inputs.pool_digest.clone(),
            queries_file: inputs.queries_digest.clone(),
            embeddings_file: inputs.embeddings_digest.clone(),
            seed: run.seed,
            k_shots: run.k.unwrap_or(inputs.task.k_shots),
            num_bins: run.bins.unwrap_or(inputs.task.num_bins),
            samples_per_bin: run.samples,
            num_queries: run.queries_n,
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("fingerprint serializes").as_bytes())
    }
}

/// Builds the completion backend from the flags.
pub fn build_backend(args: &BackendArgs, num_bins: usize) -> CliResult<Backend> {
    match args.backend {
        BackendArg::Mock => {
            let oracle = match &args.mock_oracle {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(validation)?;
                    serde_json::from_str::<MockOracle>(&text)
                        .with_context(|| format!("parsing {}", path.display()))
                        .map_err(validation)?
                }
                None => MockOracle::flat(num_bins, args.mock_p, 0),
            };
            Backend::new(BackendConfig::Mock(oracle)).map_err(validation)
        }
        BackendArg::Remote => {
            let cfg = RemoteConfig {
                base_url: args.base_url.clone(),
                model_name: args.model.clone(),
                temperature: args.temperature,
                max_tokens: args.max_tokens,
                token_env: args.token_env.clone(),
                max_inflight: args.max_inflight,
                ..RemoteConfig::default()
            };
            Backend::new(BackendConfig::Remote(cfg)).map_err(validation)
        }
    }
}

/// Resolves instruction fragments: an explicit asset file wins, else the
/// bundled asset for the task name, else empty fragments (valid for `ni`).
pub fn build_instruction_from_args(
    task: &TaskSpec,
    args: &InstructionArgs,
) -> CliResult<Instruction> {
    let kind: InstructionKind = args.instruction_kind.into();
    let fragments = match &args.instruction_asset {
        Some(path) => InstructionFragments::load(path).map_err(validation)?,
        None => builtin_fragments(&task.name).unwrap_or_default(),
    };
    build_instruction(task, kind, &fragments).map_err(validation)
}

/// Advisory exclusive lock on a run directory; the file holds the owner pid.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(runtime(anyhow!(
                "run directory {} is locked by another process (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(runtime(anyhow!("cannot lock {}: {e}", dir.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One stored demo set. `outputs` appears once `perturb` has materialized
/// (possibly rewritten) outputs; until then outputs come from the pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoRecord {
    pub config_hash: String,
    pub query_id: String,
    pub variant: usize,
    pub source: SelectorKind,
    pub seed: u64,
    pub demo_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_mode: Option<LabelMode>,
}

/// Stored bin partition for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinRecord {
    pub config_hash: String,
    #[serde(flatten)]
    pub partition: nice_core::similarity::BinPartition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub mean: f64,
    pub std: f64,
}

/// Aggregated scores for one (selector, instruction) arm: the mean of
/// per-query means, with the mean of per-query standard deviations as the
/// error bar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub selector: SelectorKind,
    pub instruction_kind: InstructionKind,
    pub label_mode: LabelMode,
    pub mean_score: f64,
    pub mean_std: f64,
    pub queries_used: usize,
    pub prompts_scored: usize,
    pub backend: String,
    pub seed: u64,
    pub config_hash: String,
    pub per_query: Vec<QueryEval>,
}

pub fn selector_name(kind: SelectorKind) -> &'static str {
    match kind {
        SelectorKind::Random => "random",
        SelectorKind::TopKDense => "top_k",
        SelectorKind::Bm25 => "bm25",
        SelectorKind::Dpp => "dpp",
        SelectorKind::BinSample => "bin_sample",
    }
}

pub fn write_json_pretty(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut body = serde_json::to_vec_pretty(value)
        .context("serializing artifact")
        .map_err(runtime)?;
    body.push(b'\n');
    fs::write(path, body)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .context("serializing artifact row")
            .map_err(runtime)?;
        out.push(b'\n');
    }
    fs::write(path, out)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(validation)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
                .map_err(validation)
        })
        .collect()
}
