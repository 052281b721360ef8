//! Deterministic mock oracle.
//!
//! The oracle answers with the gold output with probability
//! `multiplier(instruction kind) * per_bin_success[bin]` (clamped to 1), else
//! a wrong answer. The Bernoulli draw is keyed by (seed, query id, bin,
//! sample), never by the prompt bytes, so bin membership is the only thing
//! that moves the success rate. That is exactly the premise the invariability
//! metric needs a controllable ground truth for.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prompting::InstructionKind;

use super::{derive_cell_seed, CompletionMeta, ModelError};

/// What the oracle says when the draw fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrongAnswerPolicy {
    /// A fixed token guaranteed to differ from the gold output.
    FixedWrongToken,
    /// A uniformly random label other than the gold one; requires `labels`.
    RandomOtherLabel,
}

const WRONG_TOKEN: &str = "__incorrect__";
const WRONG_TOKEN_ALT: &str = "__incorrect_2__";

/// Configurable ground truth for estimator and metric tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockOracle {
    /// Success probability per bin, bin 0 first.
    pub per_bin_success: Vec<f64>,
    /// Per-kind factor applied to the bin probability; kinds absent from the
    /// map use 1. Products are clamped into [0, 1] at draw time.
    #[serde(default)]
    pub instruction_multiplier: BTreeMap<InstructionKind, f64>,
    pub wrong_answer_policy: WrongAnswerPolicy,
    /// Label space for `RandomOtherLabel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub seed: u64,
}

impl MockOracle {
    /// A flat oracle: the same success probability in every bin.
    pub fn flat(num_bins: usize, p: f64, seed: u64) -> Self {
        Self {
            per_bin_success: vec![p; num_bins],
            instruction_multiplier: BTreeMap::new(),
            wrong_answer_policy: WrongAnswerPolicy::FixedWrongToken,
            labels: None,
            seed,
        }
    }

    /// A spiked oracle: `peak` in bin 0, `rest` everywhere else.
    pub fn spike(num_bins: usize, peak: f64, rest: f64, seed: u64) -> Self {
        let mut per_bin_success = vec![rest; num_bins];
        if num_bins > 0 {
            per_bin_success[0] = peak;
        }
        Self {
            per_bin_success,
            instruction_multiplier: BTreeMap::new(),
            wrong_answer_policy: WrongAnswerPolicy::FixedWrongToken,
            labels: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.per_bin_success.is_empty() {
            return Err(ModelError::InvalidConfig("per_bin_success is empty".into()));
        }
        for (j, p) in self.per_bin_success.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(ModelError::InvalidConfig(format!(
                    "per_bin_success[{j}] = {p} is outside [0, 1]"
                )));
            }
        }
        for (kind, m) in &self.instruction_multiplier {
            if !m.is_finite() || *m < 0.0 {
                return Err(ModelError::InvalidConfig(format!(
                    "multiplier for {kind} must be finite and >= 0, got {m}"
                )));
            }
        }
        if self.wrong_answer_policy == WrongAnswerPolicy::RandomOtherLabel
            && self.labels.as_ref().is_none_or(Vec::is_empty)
        {
            return Err(ModelError::InvalidConfig(
                "random_other_label requires a label list".into(),
            ));
        }
        Ok(())
    }

    /// Success probability the draw for `meta` actually uses.
    pub fn effective_p(&self, bin_index: usize, kind: InstructionKind) -> Option<f64> {
        let p = *self.per_bin_success.get(bin_index)?;
        let m = self.instruction_multiplier.get(&kind).copied().unwrap_or(1.0);
        Some((p * m).clamp(0.0, 1.0))
    }

    pub(super) fn complete(&self, meta: &CompletionMeta) -> Result<String, ModelError> {
        let p = self
            .effective_p(meta.bin_index, meta.instruction_kind)
            .ok_or_else(|| {
                ModelError::InvalidConfig(format!(
                    "bin index {} outside the configured {} bins",
                    meta.bin_index,
                    self.per_bin_success.len()
                ))
            })?;
        let cell = derive_cell_seed(
            self.seed,
            "mock-draw",
            meta.query_id,
            meta.bin_index,
            meta.sample_index,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cell);
        if rng.gen::<f64>() < p {
            return Ok(meta.gold_output.to_string());
        }
        Ok(self.wrong_answer(meta.gold_output, &mut rng))
    }

    fn wrong_answer(&self, gold: &str, rng: &mut ChaCha8Rng) -> String {
        match self.wrong_answer_policy {
            WrongAnswerPolicy::FixedWrongToken => {
                if gold.trim() == WRONG_TOKEN {
                    WRONG_TOKEN_ALT.to_string()
                } else {
                    WRONG_TOKEN.to_string()
                }
            }
            WrongAnswerPolicy::RandomOtherLabel => {
                let labels = self.labels.as_ref().expect("validated at construction");
                let others: Vec<&String> = labels.iter().filter(|l| *l != gold).collect();
                match others.choose(rng) {
                    Some(l) => (*l).clone(),
                    None => WRONG_TOKEN.to_string(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Backend, BackendConfig};

    fn meta<'a>(query_id: &'a str, bin: usize, sample: usize) -> CompletionMeta<'a> {
        CompletionMeta {
            query_id,
            bin_index: bin,
            sample_index: sample,
            instruction_kind: InstructionKind::Td,
            gold_output: "gold",
        }
    }

    #[test]
    fn certain_bins_always_answer_gold() {
        let backend = Backend::new(BackendConfig::Mock(MockOracle::flat(3, 1.0, 1))).unwrap();
        for s in 0..50 {
            assert_eq!(backend.complete("p", &meta("q", 1, s)).unwrap(), "gold");
        }
    }

    #[test]
    fn impossible_bins_never_answer_gold() {
        let backend = Backend::new(BackendConfig::Mock(MockOracle::flat(3, 0.0, 1))).unwrap();
        for s in 0..50 {
            assert_ne!(backend.complete("p", &meta("q", 1, s)).unwrap(), "gold");
        }
    }

    #[test]
    fn half_probability_concentrates_around_half() {
        // 500 draws at p = 0.5; 3 sigma is about 0.067.
        let backend = Backend::new(BackendConfig::Mock(MockOracle::flat(1, 0.5, 42))).unwrap();
        let mut gold = 0;
        for s in 0..500 {
            if backend.complete("p", &meta("q", 0, s)).unwrap() == "gold" {
                gold += 1;
            }
        }
        let rate = gold as f64 / 500.0;
        assert!((0.43..=0.57).contains(&rate), "gold rate {rate}");
    }

    #[test]
    fn draws_are_keyed_not_sequential() {
        let oracle = MockOracle::flat(2, 0.5, 7);
        let backend = Backend::new(BackendConfig::Mock(oracle)).unwrap();
        let forward: Vec<String> = (0..20)
            .map(|s| backend.complete("p", &meta("q", 0, s)).unwrap())
            .collect();
        let backward: Vec<String> = (0..20)
            .rev()
            .map(|s| backend.complete("p", &meta("q", 0, s)).unwrap())
            .collect();
        let mut backward = backward;
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn multiplier_scales_and_clamps() {
        let mut oracle = MockOracle::flat(1, 0.6, 1);
        oracle.instruction_multiplier.insert(InstructionKind::Ni, 0.0);
        oracle.instruction_multiplier.insert(InstructionKind::Td, 2.0);
        assert_eq!(oracle.effective_p(0, InstructionKind::Ni), Some(0.0));
        assert_eq!(oracle.effective_p(0, InstructionKind::Td), Some(1.0));
        assert_eq!(oracle.effective_p(0, InstructionKind::TdLm), Some(0.6));
    }

    #[test]
    fn random_other_label_avoids_gold() {
        let oracle = MockOracle {
            per_bin_success: vec![0.0],
            instruction_multiplier: BTreeMap::new(),
            wrong_answer_policy: WrongAnswerPolicy::RandomOtherLabel,
            labels: Some(vec!["a".into(), "b".into(), "gold".into()]),
            seed: 3,
        };
        let backend = Backend::new(BackendConfig::Mock(oracle)).unwrap();
        for s in 0..100 {
            let out = backend.complete("p", &meta("q", 0, s)).unwrap();
            assert!(out == "a" || out == "b", "got {out}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(MockOracle::flat(0, 0.5, 1).validate().is_err());
        assert!(MockOracle::flat(2, 1.5, 1).validate().is_err());
        let bad = MockOracle {
            per_bin_success: vec![0.5],
            instruction_multiplier: BTreeMap::new(),
            wrong_answer_policy: WrongAnswerPolicy::RandomOtherLabel,
            labels: None,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn calibration_tracks_configured_probability() {
        // For several bins and probabilities, the empirical gold rate over
        // 1000 keyed draws stays within 3 sigma of the configured value.
        let probabilities = [0.1, 0.3, 0.7, 0.9];
        let oracle = MockOracle {
            per_bin_success: probabilities.to_vec(),
            instruction_multiplier: BTreeMap::new(),
            wrong_answer_policy: WrongAnswerPolicy::FixedWrongToken,
            labels: None,
            seed: 1234,
        };
        let backend = Backend::new(BackendConfig::Mock(oracle)).unwrap();
        let n = 1000;
        for (bin, &p) in probabilities.iter().enumerate() {
            let mut gold = 0;
            for s in 0..n {
                let m = CompletionMeta {
                    query_id: "calibration",
                    bin_index: bin,
                    sample_index: s,
                    instruction_kind: InstructionKind::Td,
                    gold_output: "gold",
                };
                if backend.complete("p", &m).unwrap() == "gold" {
                    gold += 1;
                }
            }
            let rate = gold as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (rate - p).abs() <= 3.0 * sigma,
                "bin {bin}: rate {rate} vs p {p} (3 sigma {})",
                3.0 * sigma
            );
        }
    }
}
