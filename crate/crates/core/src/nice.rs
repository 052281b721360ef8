//! Bin-score estimation and the NICE invariability metric.
//!
//! For each query the candidate pool is split into similarity-percentile
//! bins; the bin score is the expected task performance when the prompt uses
//! the given instruction plus random k-shot demonstrations drawn from that
//! bin alone. NICE is the ratio of the mean bin score to the maximum bin
//! score: near 1, example choice barely moves performance and instruction
//! work pays; near 1/|bins|, the task is retrieval-bound and example
//! optimization pays.
//!
//! Estimation walks the (query x bin x sample) grid. Each cell derives its
//! own RNG stream from the run seed and its coordinates, so results are
//! independent of evaluation order and reruns are byte-identical.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_queries, CandidatePool, CorpusError, Query, QuerySet, TaskSpec};
use crate::metrics;
use crate::model::{
    cached_complete, derive_cell_seed, Backend, CompletionCache, CompletionMeta, ModelError,
};
use crate::prompting::{
    assemble_prompt, perturb_labels, Demo, Instruction, LabelMode, PromptError, PromptTemplate,
};
use crate::similarity::{partition_bins, BinPartition, SimilarityError};

#[derive(Debug, Error)]
pub enum NiceError {
    #[error("all bin scores are zero; the ratio is undefined")]
    AllBinsZero,
    #[error("invalid bin scores: {0}")]
    InvalidScores(String),
    #[error("dimension mismatch: {got} vs {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("thresholds must satisfy 0 < low < high <= 1, got {low} and {high}")]
    BadThresholds { low: f64, high: f64 },
    #[error("bin {bin_index} for query \"{query_id}\" holds {size} examples, fewer than k = {k}")]
    BinTooSmall { query_id: String, bin_index: usize, size: usize, k: usize },
    #[error("no queries to estimate over")]
    NoQueries,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Estimation protocol knobs. Defaults follow the reference protocol:
/// 50 queries, 10 sampled k-shot sets per bin, 10 bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub num_queries: usize,
    pub samples_per_bin: usize,
    pub k_shots: usize,
    pub num_bins: usize,
    pub seed: u64,
    pub label_mode: LabelMode,
}

impl EstimatorConfig {
    pub fn for_task(task: &TaskSpec, seed: u64) -> Self {
        Self {
            num_queries: 50,
            samples_per_bin: 10,
            k_shots: task.k_shots,
            num_bins: task.num_bins,
            seed,
            label_mode: LabelMode::Gold,
        }
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<(), NiceError> {
        for (name, value) in [
            ("num_queries", self.num_queries),
            ("samples_per_bin", self.samples_per_bin),
            ("k_shots", self.k_shots),
        ] {
            if value < 1 {
                return Err(NiceError::InvalidScores(format!("{name} must be >= 1")));
            }
        }
        if self.num_bins < 2 {
            return Err(NiceError::InvalidScores("num_bins must be >= 2".into()));
        }
        match self.label_mode {
            LabelMode::RandomLabel if task.label_space.is_none() => {
                Err(PromptError::ModeTaskMismatch {
                    mode: self.label_mode,
                    task_kind: task.kind,
                }
                .into())
            }
            LabelMode::ShuffleOutputs if self.k_shots < 2 => {
                Err(PromptError::TooFewDemos(self.k_shots).into())
            }
            _ => Ok(()),
        }
    }
}

/// Estimated score for one bin: the mean over queries of per-query sample
/// means, plus the raw per-sample outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub score: f64,
    /// Sample standard deviation over the per-query means.
    pub std_dev: f64,
    pub per_query_means: Vec<f64>,
    /// `raw[query][sample]` outcome in [0, 1].
    pub raw: Vec<Vec<f64>>,
}

/// All bin estimates for one instruction, with the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinScoreMatrix {
    pub scores: Vec<f64>,
    pub std_devs: Vec<f64>,
    /// `raw[bin][query][sample]`.
    pub raw: Vec<Vec<Vec<f64>>>,
    pub instruction_kind: crate::prompting::InstructionKind,
    pub config: EstimatorConfig,
}

impl BinScoreMatrix {
    pub fn nice(&self) -> Result<f64, NiceError> {
        compute_nice(&self.scores)
    }
}

/// The NICE ratio: mean bin score over max bin score, in (0, 1] whenever some
/// bin score is positive. Scores must be non-negative and finite.
pub fn compute_nice(scores: &[f64]) -> Result<f64, NiceError> {
    if scores.is_empty() {
        return Err(NiceError::InvalidScores("empty score vector".into()));
    }
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for (j, &s) in scores.iter().enumerate() {
        if !s.is_finite() || s < 0.0 {
            return Err(NiceError::InvalidScores(format!(
                "score[{j}] = {s} is not a finite non-negative value"
            )));
        }
        sum += s;
        max = max.max(s);
    }
    if max == 0.0 {
        return Err(NiceError::AllBinsZero);
    }
    // Dividing by max before averaging keeps the flat and one-hot cases
    // exact; the clamp absorbs the last-bit rounding above 1.
    Ok((sum / max / scores.len() as f64).min(1.0))
}

/// Non-negative per-bin weights, normalized to sum 1 on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, NiceError> {
        if weights.is_empty() {
            return Err(NiceError::InvalidScores("empty weight vector".into()));
        }
        let mut sum = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(NiceError::InvalidScores(format!(
                    "weight[{j}] = {w} is not a finite non-negative value"
                )));
            }
            sum += w;
        }
        if sum == 0.0 {
            return Err(NiceError::InvalidScores("weights must not all be zero".into()));
        }
        Ok(Self { weights: weights.into_iter().map(|w| w / sum).collect() })
    }

    pub fn uniform(n: usize) -> Result<Self, NiceError> {
        Self::new(vec![1.0; n])
    }

    /// Weights proportional to the scores themselves, the reweighting step of
    /// the iterative instruction-improvement scheme.
    pub fn proportional_to(scores: &[f64]) -> Result<Self, NiceError> {
        Self::new(scores.to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// `sum_j w[j] * scores[j]` under normalized weights.
pub fn weighted_objective(scores: &[f64], weights: &WeightVector) -> Result<f64, NiceError> {
    if scores.len() != weights.weights.len() {
        return Err(NiceError::DimensionMismatch {
            got: scores.len(),
            want: weights.weights.len(),
        });
    }
    Ok(scores.iter().zip(&weights.weights).map(|(s, w)| s * w).sum())
}

/// Outcome of a componentwise comparison of two bin-score vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoOrder {
    ADominates,
    BDominates,
    Equal,
    Incomparable,
}

/// Pareto comparison: a dominates when it is at least as good in every bin
/// and strictly better somewhere.
pub fn pareto_compare(a: &[f64], b: &[f64]) -> Result<ParetoOrder, NiceError> {
    if a.len() != b.len() {
        return Err(NiceError::DimensionMismatch { got: a.len(), want: b.len() });
    }
    let mut a_better = false;
    let mut b_better = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            a_better = true;
        } else if y > x {
            b_better = true;
        }
    }
    Ok(match (a_better, b_better) {
        (false, false) => ParetoOrder::Equal,
        (true, false) => ParetoOrder::ADominates,
        (false, true) => ParetoOrder::BDominates,
        (true, true) => ParetoOrder::Incomparable,
    })
}

/// Where to spend the next unit of prompt-engineering budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    OptimizeIce,
    Indeterminate,
    OptimizeInstruction,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::OptimizeIce => "optimize_ice",
            Decision::Indeterminate => "indeterminate",
            Decision::OptimizeInstruction => "optimize_instruction",
        })
    }
}

/// Decision band. Values below `low` point at example optimization, above
/// `high` at instruction improvement; the band between is indeterminate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 0.4, high: 0.85 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), NiceError> {
        if !(self.low > 0.0 && self.low < self.high && self.high <= 1.0) {
            return Err(NiceError::BadThresholds { low: self.low, high: self.high });
        }
        Ok(())
    }
}

/// Maps a NICE value onto the decision band.
pub fn decide(nice_value: f64, low: f64, high: f64) -> Result<Decision, NiceError> {
    let thresholds = Thresholds { low, high };
    thresholds.validate()?;
    Ok(if nice_value < low {
        Decision::OptimizeIce
    } else if nice_value > high {
        Decision::OptimizeInstruction
    } else {
        Decision::Indeterminate
    })
}

/// Run identity and accounting carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub backend: String,
    pub pool_size: usize,
    pub queries_used: usize,
    /// Logical completion count (query x bin x sample), independent of how
    /// many calls the cache absorbed.
    pub completions: u64,
    pub cache_enabled: bool,
    pub config_hash: String,
}

/// The full result of a NICE run. `nice` is absent for the degenerate
/// all-bins-zero case, which is reported rather than guessed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiceReport {
    pub task: String,
    pub instruction_kind: crate::prompting::InstructionKind,
    pub nice: Option<f64>,
    pub bin_scores: Vec<f64>,
    pub bin_std: Vec<f64>,
    pub verdict: Decision,
    pub thresholds: Thresholds,
    pub config: EstimatorConfig,
    pub provenance: Provenance,
}

impl NiceReport {
    /// Aligned plain-text rendering of the report.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "task: {}    instruction: {}    backend: {}\n",
            self.task, self.instruction_kind, self.provenance.backend
        ));
        match self.nice {
            Some(v) => out.push_str(&format!("NICE: {v:.4}    verdict: {}\n", self.verdict)),
            None => out.push_str(&format!(
                "NICE: degenerate (all bin scores are zero)    verdict: {}\n",
                self.verdict
            )),
        }
        out.push_str(&format!(
            "thresholds: optimize_ice < {:.3} <= indeterminate <= {:.3} < optimize_instruction\n",
            self.thresholds.low, self.thresholds.high
        ));
        out.push_str(&format!(
            "queries: {}    samples/bin: {}    k: {}    seed: {}\n\n",
            self.provenance.queries_used,
            self.config.samples_per_bin,
            self.config.k_shots,
            self.provenance.seed
        ));
        out.push_str("bin    score     std\n");
        for (j, (s, d)) in self.bin_scores.iter().zip(&self.bin_std).enumerate() {
            out.push_str(&format!("{:>3}    {s:.4}    {d:.4}\n", j + 1));
        }
        out
    }
}

/// Everything a NICE estimation run needs, borrowed for its duration.
pub struct Estimator<'a> {
    pub task: &'a TaskSpec,
    pub pool: &'a CandidatePool,
    pub template: &'a PromptTemplate,
    pub backend: &'a Backend,
    pub cache: Option<&'a CompletionCache>,
    pub config: &'a EstimatorConfig,
    pub thresholds: Thresholds,
    /// Opaque run-config fingerprint recorded in provenance; artifacts from
    /// different fingerprints must never be mixed.
    pub config_hash: String,
}

struct Cell {
    query_index: usize,
    sample_index: usize,
}

impl Estimator<'_> {
    fn complete(&self, prompt: &str, meta: &CompletionMeta) -> Result<String, ModelError> {
        match self.cache {
            Some(cache) => cached_complete(cache, self.backend, prompt, meta),
            None => self.backend.complete(prompt, meta),
        }
    }

    fn evaluate_cell(
        &self,
        instruction: &Instruction,
        bin_index: usize,
        query: &Query,
        partition: &BinPartition,
        sample_index: usize,
    ) -> Result<f64, NiceError> {
        let members = partition.bin(bin_index);
        let k = self.config.k_shots;
        if members.len() < k {
            return Err(NiceError::BinTooSmall {
                query_id: query.id.clone(),
                bin_index,
                size: members.len(),
                k,
            });
        }

        let cell_seed =
            derive_cell_seed(self.config.seed, "draw", &query.id, bin_index, sample_index);
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
        let mut picks = rand::seq::index::sample(&mut rng, members.len(), k).into_vec();
        // Bin members are stored in rank order; sorting the picked positions
        // renders demos similarity-descending.
        picks.sort_unstable();

        let demos: Vec<Demo> = picks
            .iter()
            .map(|&i| {
                let ex = self.pool.get(&members[i]).expect("partition ids come from the pool");
                Demo { input: ex.input.clone(), output: ex.output.clone() }
            })
            .collect();
        let perturb_seed = rng.gen::<u64>();
        let demos = perturb_labels(&demos, self.task, self.config.label_mode, perturb_seed)?;

        let prompt = assemble_prompt(instruction, &demos, &query.input, self.template);
        let meta = CompletionMeta {
            query_id: &query.id,
            bin_index,
            sample_index,
            instruction_kind: instruction.kind,
            gold_output: &query.gold,
        };
        let response = self.complete(&prompt, &meta)?;
        Ok(metrics::score(
            self.task.measure,
            &response,
            &query.gold,
            self.task.label_space.as_ref(),
        )
        .value)
    }

    /// Estimates the score of one bin over the given queries: for every query,
    /// `samples_per_bin` independent without-replacement k-shot draws from
    /// that query's bin, completed and scored; the bin score is the mean over
    /// queries of the per-query sample means.
    ///
    /// Cells run on up to `backend.parallelism()` workers; outcomes are keyed
    /// by coordinates before reduction, so the result is order-independent.
    pub fn estimate_bin_score(
        &self,
        instruction: &Instruction,
        bin_index: usize,
        queries: &QuerySet,
        partitions: &[BinPartition],
    ) -> Result<BinEstimate, NiceError> {
        assert_eq!(queries.len(), partitions.len(), "one partition per query");
        if queries.is_empty() {
            return Err(NiceError::NoQueries);
        }
        let samples = self.config.samples_per_bin;
        let cells: Vec<Cell> = (0..queries.len())
            .flat_map(|query_index| {
                (0..samples).map(move |sample_index| Cell { query_index, sample_index })
            })
            .collect();

        let workers = self.backend.parallelism().min(cells.len()).max(1);
        let next = AtomicUsize::new(0);
        let outcomes: Mutex<Vec<(usize, Result<f64, NiceError>)>> =
            Mutex::new(Vec::with_capacity(cells.len()));

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= cells.len() {
                        break;
                    }
                    let cell = &cells[i];
                    let result = self.evaluate_cell(
                        instruction,
                        bin_index,
                        &queries.queries()[cell.query_index],
                        &partitions[cell.query_index],
                        cell.sample_index,
                    );
                    outcomes.lock().unwrap().push((i, result));
                });
            }
        });

        let mut keyed = outcomes.into_inner().unwrap();
        keyed.sort_by_key(|(i, _)| *i);
        let mut raw = vec![vec![0.0; samples]; queries.len()];
        for (i, result) in keyed {
            raw[cells[i].query_index][cells[i].sample_index] = result?;
        }

        let per_query_means: Vec<f64> =
            raw.iter().map(|r| r.iter().sum::<f64>() / samples as f64).collect();
        let score = per_query_means.iter().sum::<f64>() / per_query_means.len() as f64;
        let std_dev = if per_query_means.len() > 1 {
            let n = per_query_means.len() as f64;
            (per_query_means.iter().map(|m| (m - score).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(BinEstimate { score, std_dev, per_query_means, raw })
    }

    /// End-to-end run: sample queries, partition the pool per query, estimate
    /// every bin, reduce to NICE, and decide.
    pub fn run_nice(
        &self,
        instruction: &Instruction,
        queries: &QuerySet,
    ) -> Result<NiceReport, NiceError> {
        self.task.validate()?;
        self.config.validate(self.task)?;
        self.thresholds.validate()?;

        let query_seed = derive_cell_seed(self.config.seed, "sample-queries", "", 0, 0);
        let sampled = sample_queries(queries, self.config.num_queries, query_seed);
        if sampled.is_empty() {
            return Err(NiceError::NoQueries);
        }
        let partitions: Vec<BinPartition> = sampled
            .iter()
            .map(|q| partition_bins(self.pool, q, self.config.num_bins))
            .collect::<Result<_, _>>()?;

        let mut scores = Vec::with_capacity(self.config.num_bins);
        let mut stds = Vec::with_capacity(self.config.num_bins);
        for bin_index in 0..self.config.num_bins {
            let estimate = self.estimate_bin_score(instruction, bin_index, &sampled, &partitions)?;
            scores.push(estimate.score);
            stds.push(estimate.std_dev);
        }

        let (nice, verdict) = match compute_nice(&scores) {
            Ok(v) => (Some(v), decide(v, self.thresholds.low, self.thresholds.high)?),
            Err(NiceError::AllBinsZero) => {
                log::warn!("all bin scores are zero; reporting a degenerate run");
                (None, Decision::Indeterminate)
            }
            Err(e) => return Err(e),
        };

        Ok(NiceReport {
            task: self.task.name.clone(),
            instruction_kind: instruction.kind,
            nice,
            bin_scores: scores,
            bin_std: stds,
            verdict,
            thresholds: self.thresholds,
            config: self.config.clone(),
            provenance: Provenance {
                seed: self.config.seed,
                backend: self.backend.id(),
                pool_size: self.pool.len(),
                queries_used: sampled.len(),
                completions: (sampled.len() * self.config.num_bins * self.config.samples_per_bin)
                    as u64,
                cache_enabled: self.cache.is_some(),
                config_hash: self.config_hash.clone(),
            },
        })
    }
}
