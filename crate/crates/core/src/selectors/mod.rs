//! In-context example selectors: random, dense top-k, BM25, and DPP greedy
//! MAP, plus the demonstration-order permutation used for error bars.
//!
//! All selectors are pure given (pool, query, seed) and safe to run
//! data-parallel across queries. Ties are always broken by ascending example
//! id so repeated runs select identically.

pub mod bm25;
pub mod dpp;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, Query};
use crate::similarity::{similarity_scores, SimilarityError};

pub use bm25::{bm25_score, select_bm25, Bm25Params, CorpusStats};
pub use dpp::{greedy_map, select_dpp};

#[derive(Debug, Error)]
pub enum SelectorError {
    /// Also raised for k = 0; valid shot counts are 1..=|pool|.
    #[error("k = {k} is outside the valid range 1..={pool_size}")]
    KTooLarge { k: usize, pool_size: usize },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("demo id \"{0}\" does not exist in the pool")]
    UnknownId(String),
    #[error("invalid BM25 parameters: {0}")]
    BadParams(String),
}

/// How a demo set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Random,
    TopKDense,
    Bm25,
    Dpp,
    BinSample,
}

/// An ordered k-shot demonstration set of pool example ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSet {
    pub demos: Vec<String>,
    pub source: SelectorKind,
    pub seed: u64,
}

impl DemoSet {
    /// Checks the structural invariants: exactly `k` distinct ids, all of
    /// which exist in `pool`.
    pub fn validate(&self, pool: &CandidatePool, k: usize) -> Result<(), SelectorError> {
        if self.demos.len() != k {
            return Err(SelectorError::KTooLarge { k, pool_size: pool.len() });
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.demos {
            if !pool.contains(id) {
                return Err(SelectorError::UnknownId(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(SelectorError::UnknownId(format!("{id} (duplicated)")));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_k(k: usize, pool_size: usize) -> Result<(), SelectorError> {
    if k < 1 || k > pool_size {
        return Err(SelectorError::KTooLarge { k, pool_size });
    }
    Ok(())
}

/// Uniform without-replacement sample of `k` examples, in sample order.
pub fn select_random(pool: &CandidatePool, k: usize, seed: u64) -> Result<DemoSet, SelectorError> {
    check_k(k, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = pool.examples().iter().map(|e| e.id.clone()).collect();
    let (sampled, _) = ids.partial_shuffle(&mut rng, k);
    Ok(DemoSet { demos: sampled.to_vec(), source: SelectorKind::Random, seed })
}

/// The `k` most cosine-similar examples, most similar first.
pub fn select_top_k(
    pool: &CandidatePool,
    query: &Query,
    k: usize,
) -> Result<DemoSet, SelectorError> {
    check_k(k, pool.len())?;
    let mut scored = similarity_scores(pool, query)?;
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine never yields NaN")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(DemoSet {
        demos: scored.into_iter().take(k).map(|(id, _)| id).collect(),
        source: SelectorKind::TopKDense,
        seed: 0,
    })
}

/// Reorders a demo set uniformly at random, deterministic per seed. The id
/// multiset is preserved.
pub fn permute_demos(demos: &DemoSet, seed: u64) -> DemoSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = demos.demos.clone();
    ids.shuffle(&mut rng);
    DemoSet { demos: ids, source: demos.source, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;

    fn pool(n: usize) -> CandidatePool {
        CandidatePool::new(
            (0..n)
                .map(|i| Example {
                    id: format!("e{i:02}"),
                    input: format!("text {i}"),
                    output: "y".into(),
                    embedding: None,
                })
                .collect(),
            None,
        )
        .unwrap()
    }

    fn pool_with_sims(sims: &[(&str, f64)]) -> (CandidatePool, Query) {
        let examples = sims
            .iter()
            .map(|(id, s)| Example {
                id: (*id).to_string(),
                input: format!("input {id}"),
                output: "y".into(),
                embedding: Some(vec![*s, (1.0 - s * s).max(0.0).sqrt()]),
            })
            .collect();
        let pool = CandidatePool::new(examples, None).unwrap();
        let query = Query {
            id: "q".into(),
            input: "query".into(),
            gold: "y".into(),
            embedding: Some(vec![1.0, 0.0]),
        };
        (pool, query)
    }

    #[test]
    fn random_full_pool_is_permutation() {
        let p = pool(6);
        let set = select_random(&p, 6, 42).unwrap();
        let mut got = set.demos.clone();
        got.sort();
        let want: Vec<String> = p.examples().iter().map(|e| e.id.clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let p = pool(20);
        assert_eq!(select_random(&p, 5, 9).unwrap(), select_random(&p, 5, 9).unwrap());
        assert_ne!(
            select_random(&p, 5, 9).unwrap().demos,
            select_random(&p, 5, 10).unwrap().demos
        );
    }

    #[test]
    fn random_rejects_out_of_range_k() {
        let p = pool(3);
        assert!(matches!(
            select_random(&p, 0, 1),
            Err(SelectorError::KTooLarge { k: 0, .. })
        ));
        assert!(matches!(
            select_random(&p, 4, 1),
            Err(SelectorError::KTooLarge { k: 4, .. })
        ));
    }

    #[test]
    fn top_k_picks_highest_similarity() {
        let (p, q) = pool_with_sims(&[("a", 0.9), ("b", 0.1), ("c", 0.5)]);
        assert_eq!(select_top_k(&p, &q, 2).unwrap().demos, ["a", "c"]);
        assert_eq!(select_top_k(&p, &q, 1).unwrap().demos, ["a"]);
    }

    #[test]
    fn top_k_ties_take_lowest_ids() {
        let (p, q) = pool_with_sims(&[("c", 0.5), ("a", 0.5), ("b", 0.5)]);
        assert_eq!(select_top_k(&p, &q, 2).unwrap().demos, ["a", "b"]);
    }

    #[test]
    fn permute_preserves_multiset_and_is_deterministic() {
        let set = DemoSet {
            demos: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            source: SelectorKind::Random,
            seed: 0,
        };
        let p1 = permute_demos(&set, 5);
        let p2 = permute_demos(&set, 5);
        assert_eq!(p1, p2);
        let mut sorted = p1.demos.clone();
        sorted.sort();
        assert_eq!(sorted, set.demos);

        let single = DemoSet { demos: vec!["only".into()], ..set.clone() };
        assert_eq!(permute_demos(&single, 99).demos, ["only"]);
    }

    proptest::proptest! {
        #[test]
        fn top_k_dominates_unselected(seed in 0u64..500, n in 2usize..30, k in 1usize..10) {
            proptest::prop_assume!(k <= n);
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sims: Vec<(String, f64)> = (0..n)
                .map(|i| (format!("e{i:02}"), rng.gen_range(-0.99..0.99)))
                .collect();
            let refs: Vec<(&str, f64)> = sims.iter().map(|(s, v)| (s.as_str(), *v)).collect();
            let (p, q) = pool_with_sims(&refs);
            let selected = select_top_k(&p, &q, k).unwrap();
            let sim_of = |id: &str| sims.iter().find(|(s, _)| s == id).unwrap().1;
            let min_sel = selected.demos.iter().map(|id| sim_of(id)).fold(f64::INFINITY, f64::min);
            let max_unsel = sims
                .iter()
                .filter(|(id, _)| !selected.demos.contains(id))
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(selected.demos.len() == k);
            proptest::prop_assert!(max_unsel.is_infinite() || min_sel >= max_unsel - 1e-9);
        }

        #[test]
        fn all_selectors_return_k_distinct_ids(seed in 0u64..200, n in 1usize..25, k in 1usize..8) {
            proptest::prop_assume!(k <= n);
            let p = pool(n);
            let set = select_random(&p, k, seed).unwrap();
            set.validate(&p, k).unwrap();
        }
    }
}
