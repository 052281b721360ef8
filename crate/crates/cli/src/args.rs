//! Flag definitions for the `nice` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use nice_core::prompting::{InstructionKind, LabelMode};
use nice_core::selectors::SelectorKind;

#[derive(Parser, Debug)]
#[command(
    name = "nice",
    about = "Measure how much a task's LLM performance depends on in-context example choice, \
             and decide whether to spend budget on the instruction or on example selection.",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the task spec, pool, queries, and bin feasibility.
    Validate(InputArgs),
    /// Write per-query similarity-percentile bin partitions.
    Bins {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Estimate bin scores, compute NICE, and write the report.
    Nice {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        instruction: InstructionArgs,
        /// NICE below this favors example optimization.
        #[arg(long, default_value_t = 0.4)]
        low_threshold: f64,
        /// NICE above this favors instruction improvement.
        #[arg(long, default_value_t = 0.85)]
        high_threshold: f64,
    },
    /// Write per-query demo sets for a selector.
    Select {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Which selector produces the demo sets.
        #[arg(long, value_enum)]
        selector: SelectorArg,
        /// Independent demo sets per query (random selector only; others are
        /// deterministic and emit one).
        #[arg(long, default_value_t = 1)]
        variants: usize,
        /// Quality weight exponent for the DPP kernel.
        #[arg(long, default_value_t = 1.0)]
        quality_scale: f64,
    },
    /// Complete and score stored demo sets against the task measure.
    Eval {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        instruction: InstructionArgs,
        /// Demo-set file written by `select` or `perturb`.
        #[arg(long)]
        demos: PathBuf,
        /// Demo-order permutations per query when the file holds one variant.
        #[arg(long, default_value_t = 3)]
        permutations: usize,
    },
    /// Materialize label-perturbed copies of stored demo sets.
    Perturb {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Demo-set file written by `select`.
        #[arg(long)]
        demos: PathBuf,
    },
    /// Render tables from the artifacts in a run directory.
    Report {
        /// Run directory holding the artifacts.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Input bundle shared by every pipeline stage.
#[derive(clap::Args, Debug, Clone)]
pub struct InputArgs {
    /// Task spec JSON file.
    #[arg(long)]
    pub task: PathBuf,
    /// Candidate pool, one JSON record per line.
    #[arg(long)]
    pub pool: PathBuf,
    /// Query set, one JSON record per line.
    #[arg(long)]
    pub queries: PathBuf,
    /// Sidecar embedding file ({"text_hash", "vector"} per line).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Remote embedding endpoint URL (OpenAI-embeddings shaped).
    #[arg(long)]
    pub embed_url: Option<String>,
    /// Embedding dimension; required with --embed-url, otherwise inferred.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Environment variable holding the embedding bearer token.
    #[arg(long, default_value = "NICE_EMBED_TOKEN")]
    pub embed_token_env: String,
}

/// Protocol knobs shared by the estimating stages.
#[derive(clap::Args, Debug, Clone)]
pub struct RunArgs {
    /// Number of similarity-percentile bins.
    #[arg(long = "bins")]
    pub bins: Option<usize>,
    /// Sampled k-shot sets per bin.
    #[arg(long = "samples", default_value_t = 10)]
    pub samples: usize,
    /// Queries sampled from the query file.
    #[arg(long = "queries-n", default_value_t = 50)]
    pub queries_n: usize,
    /// Demonstrations per prompt; defaults to the task spec's k_shots.
    #[arg(long = "k")]
    pub k: Option<usize>,
    /// Demo-output perturbation applied before prompting.
    #[arg(long = "label-mode", value_enum, default_value_t = LabelModeArg::Gold)]
    pub label_mode: LabelModeArg,
    /// Run seed; recorded in every artifact.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Completion cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    pub out: PathBuf,
}

/// Completion backend selection.
#[derive(clap::Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
    pub backend: BackendArg,
    /// Mock oracle JSON config; overrides --mock-p.
    #[arg(long)]
    pub mock_oracle: Option<PathBuf>,
    /// Flat per-bin success probability for the default mock oracle.
    #[arg(long, default_value_t = 0.7)]
    pub mock_p: f64,
    /// Remote model name.
    #[arg(long, default_value = "gpt-4-turbo")]
    pub model: String,
    /// Remote API base URL.
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    /// Remote sampling temperature.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Remote completion token cap.
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
    /// Environment variable holding the completion bearer token.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub token_env: String,
    /// Concurrent remote requests.
    #[arg(long, default_value_t = 4)]
    pub max_inflight: usize,
}

/// Instruction selection.
#[derive(clap::Args, Debug, Clone)]
pub struct InstructionArgs {
    #[arg(long = "instruction-kind", value_enum, default_value_t = InstructionKindArg::Ni)]
    pub instruction_kind: InstructionKindArg,
    /// Fragment asset JSON; defaults to the bundled asset for the task name.
    #[arg(long = "instruction-asset")]
    pub instruction_asset: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendArg {
    Remote,
    Mock,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstructionKindArg {
    Ni,
    Td,
    TdLs,
    TdLm,
    TdR,
    Di,
}

impl From<InstructionKindArg> for InstructionKind {
    fn from(value: InstructionKindArg) -> Self {
        match value {
            InstructionKindArg::Ni => InstructionKind::Ni,
            InstructionKindArg::Td => InstructionKind::Td,
            InstructionKindArg::TdLs => InstructionKind::TdLs,
            InstructionKindArg::TdLm => InstructionKind::TdLm,
            InstructionKindArg::TdR => InstructionKind::TdR,
            InstructionKindArg::Di => InstructionKind::Di,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelModeArg {
    Gold,
    Random,
    Shuffle,
}

impl From<LabelModeArg> for LabelMode {
    fn from(value: LabelModeArg) -> Self {
        match value {
            LabelModeArg::Gold => LabelMode::Gold,
            LabelModeArg::Random => LabelMode::RandomLabel,
            LabelModeArg::Shuffle => LabelMode::ShuffleOutputs,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorArg {
    Random,
    TopK,
    Bm25,
    Dpp,
}

impl From<SelectorArg> for SelectorKind {
    fn from(value: SelectorArg) -> Self {
        match value {
            SelectorArg::Random => SelectorKind::Random,
            SelectorArg::TopK => SelectorKind::TopKDense,
            SelectorArg::Bm25 => SelectorKind::Bm25,
            SelectorArg::Dpp => SelectorKind::Dpp,
        }
    }
}
