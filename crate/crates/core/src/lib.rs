//! Core library for measuring how much an LLM task's performance depends on
//! the choice of in-context examples (ICE).
//!
//! The pipeline: load a candidate pool and a query set ([`corpus`]), rank and
//! percentile-bin the pool per query by cosine similarity ([`similarity`]),
//! estimate a per-bin performance score with random k-shot draws from each bin
//! ([`nice::estimate_bin_score`]), and reduce the bin scores to the NICE ratio
//! (mean over bins / max over bins). NICE near 1 means example choice barely
//! matters and budget is better spent on the instruction; NICE near 1/|bins|
//! means the task is retrieval-bound and ICE optimization pays.
//!
//! Supporting machinery: reference ICE selectors (random, dense top-k, BM25,
//! DPP greedy MAP) in [`selectors`], the instruction taxonomy and label
//! perturbations in [`prompting`], task measures normalized to `[0,1]` in
//! [`metrics`], and a completion backend (OpenAI-compatible remote or a
//! deterministic mock oracle) with a content-addressed cache in [`model`].

pub mod corpus;
pub mod metrics;
pub mod model;
pub mod nice;
pub mod prompting;
pub mod selectors;
pub mod similarity;

pub use corpus::{CandidatePool, Example, LabelSpace, Query, QuerySet, TaskKind, TaskSpec};
pub use nice::{BinScoreMatrix, Decision, EstimatorConfig, NiceReport};
pub use similarity::BinPartition;
