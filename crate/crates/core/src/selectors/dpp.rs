//! Greedy MAP subset selection for a determinantal point process.
//!
//! The L-ensemble is `L = diag(q) * S * diag(q)` where `S_ij` is cosine
//! similarity shifted to [0, 1] via `(1 + cos) / 2` and `q_i =
//! exp(quality_scale * cos(e_i, query))`. Greedy MAP adds, at every step, the
//! item whose inclusion maximizes the determinant of the selected principal
//! submatrix. A jitter of 1e-9 is added to the diagonal before every
//! determinant evaluation so duplicate rows stay numerically tractable.

use crate::corpus::{CandidatePool, Query};
use crate::similarity::cosine;

use super::{check_k, DemoSet, SelectorError, SelectorKind};

const DIAGONAL_JITTER: f64 = 1e-9;

/// Determinant by LU decomposition with partial pivoting. Row-major `n x n`.
fn determinant(mut m: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[pivot * n + col].abs() {
                pivot = row;
            }
        }
        let pivot_value = m[pivot * n + col];
        if pivot_value == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        det *= pivot_value;
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot_value;
            for j in col..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
        }
    }
    det
}

fn submatrix_det(kernel: &dyn Fn(usize, usize) -> f64, items: &[usize]) -> f64 {
    let n = items.len();
    let mut m = vec![0.0; n * n];
    for (a, &i) in items.iter().enumerate() {
        for (b, &j) in items.iter().enumerate() {
            m[a * n + b] = kernel(i, j) + if a == b { DIAGONAL_JITTER } else { 0.0 };
        }
    }
    determinant(m, n)
}

/// Greedy MAP over an implicit `n x n` kernel: repeatedly adds the item with
/// the largest resulting principal-submatrix determinant. Ties keep the
/// lowest index. Returns indices in selection order.
pub fn greedy_map_with(
    kernel: &dyn Fn(usize, usize) -> f64,
    n: usize,
    k: usize,
) -> Result<Vec<usize>, SelectorError> {
    check_k(k, n)?;
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..n).collect();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &cand) in remaining.iter().enumerate() {
            let mut trial = selected.clone();
            trial.push(cand);
            let det = submatrix_det(kernel, &trial);
            // Strict improvement only, so equal determinants keep the
            // earliest (lowest-index) candidate.
            if best.is_none_or(|(_, b)| det > b) {
                best = Some((pos, det));
            }
        }
        let (pos, _) = best.expect("remaining is non-empty while k <= n");
        selected.push(remaining.remove(pos));
    }
    Ok(selected)
}

/// Greedy MAP over an explicit kernel matrix.
pub fn greedy_map(kernel: &[Vec<f64>], k: usize) -> Result<Vec<usize>, SelectorError> {
    let n = kernel.len();
    greedy_map_with(&|i, j| kernel[i][j], n, k)
}

/// DPP selection over the pool: diversity from pairwise cosine, quality from
/// cosine to the query. Candidates are ordered by ascending id so greedy ties
/// resolve to the lowest id. Returns demos in selection order.
pub fn select_dpp(
    pool: &CandidatePool,
    query: &Query,
    k: usize,
    quality_scale: f64,
) -> Result<DemoSet, SelectorError> {
    check_k(k, pool.len())?;
    let mut ids: Vec<&str> = pool.examples().iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();

    let query_vec = query
        .embedding
        .as_deref()
        .ok_or_else(|| crate::similarity::SimilarityError::MissingEmbedding(query.id.clone()))?;
    let mut vectors = Vec::with_capacity(ids.len());
    let mut quality = Vec::with_capacity(ids.len());
    for id in &ids {
        let ex = pool.get(id).expect("id came from the pool");
        let v = ex
            .embedding
            .as_deref()
            .ok_or_else(|| crate::similarity::SimilarityError::MissingEmbedding(ex.id.clone()))?;
        quality.push((quality_scale * cosine(v, query_vec)?).exp());
        vectors.push(v);
    }

    let kernel = |i: usize, j: usize| {
        let sim = (1.0 + cosine(vectors[i], vectors[j]).expect("validated above")) / 2.0;
        quality[i] * quality[j] * sim
    };
    let picked = greedy_map_with(&kernel, ids.len(), k)?;
    Ok(DemoSet {
        demos: picked.into_iter().map(|i| ids[i].to_string()).collect(),
        source: SelectorKind::Dpp,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;

    fn diag(entries: &[f64]) -> Vec<Vec<f64>> {
        let n = entries.len();
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { entries[i] } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn diagonal_kernel_selects_largest_entries() {
        let l = diag(&[3.0, 2.0, 1.0]);
        assert_eq!(greedy_map(&l, 2).unwrap(), vec![0, 1]);
        let l = diag(&[1.0, 3.0, 2.0]);
        assert_eq!(greedy_map(&l, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn identity_kernel_ties_resolve_to_lowest_indices() {
        let l = diag(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(greedy_map(&l, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn duplicate_items_are_never_co_selected() {
        // Items 0 and 1 are identical (S = 1): their 2x2 principal minor is
        // singular, so any distinct item beats pairing them.
        let l = vec![
            vec![1.0, 1.0, 0.5],
            vec![1.0, 1.0, 0.5],
            vec![0.5, 0.5, 1.0],
        ];
        let picked = greedy_map(&l, 2).unwrap();
        assert!(!(picked.contains(&0) && picked.contains(&1)), "picked {picked:?}");
    }

    #[test]
    fn select_dpp_prefers_diverse_over_redundant() {
        // a and b are identical vectors, c is orthogonal; all equally close
        // to the query. k=2 must take one of {a,b} plus c, never a+b.
        let examples = vec![
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![1.0, 0.0, 0.0]),
            ("c", vec![0.0, 1.0, 0.0]),
        ];
        let pool = CandidatePool::new(
            examples
                .into_iter()
                .map(|(id, v)| Example {
                    id: id.into(),
                    input: String::new(),
                    output: "y".into(),
                    embedding: Some(v),
                })
                .collect(),
            None,
        )
        .unwrap();
        let query = Query {
            id: "q".into(),
            input: String::new(),
            gold: "y".into(),
            embedding: Some(vec![std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0]),
        };
        let set = select_dpp(&pool, &query, 2, 1.0).unwrap();
        let mut got = set.demos.clone();
        got.sort();
        assert_eq!(got, ["a", "c"]);
    }

    /// Cofactor-expansion determinant, an independent route from the LU
    /// elimination used by the implementation.
    fn det_cofactor(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        if n == 0 {
            return 1.0;
        }
        if n == 1 {
            return m[0][0];
        }
        let mut total = 0.0;
        for col in 0..n {
            let minor: Vec<Vec<f64>> = (1..n)
                .map(|r| {
                    (0..n)
                        .filter(|&c| c != col)
                        .map(|c| m[r][c])
                        .collect()
                })
                .collect();
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * m[0][col] * det_cofactor(&minor);
        }
        total
    }

    fn subset_det(l: &[Vec<f64>], items: &[usize]) -> f64 {
        let sub: Vec<Vec<f64>> = items
            .iter()
            .map(|&i| items.iter().map(|&j| l[i][j] + if i == j { 1e-9 } else { 0.0 }).collect())
            .collect();
        det_cofactor(&sub)
    }

    fn exhaustive_map(l: &[Vec<f64>], k: usize) -> f64 {
        let n = l.len();
        let mut best = f64::NEG_INFINITY;
        let mut subset = vec![0usize; k];
        fn rec(l: &[Vec<f64>], n: usize, k: usize, start: usize, subset: &mut Vec<usize>, depth: usize, best: &mut f64) {
            if depth == k {
                let d = subset_det(l, subset);
                if d > *best {
                    *best = d;
                }
                return;
            }
            for i in start..n {
                subset[depth] = i;
                rec(l, n, k, i + 1, subset, depth + 1, best);
            }
        }
        rec(l, n, k, 0, &mut subset, 0, &mut best);
        best
    }

    fn random_psd(n: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
        // B * B^T with random B is PSD.
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|t| b[i][t] * b[j][t]).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn greedy_never_beats_exhaustive_and_matches_on_diagonal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = rng.gen_range(2..=8);
            let k = rng.gen_range(1..=3.min(n));
            let l = if trial % 2 == 0 {
                random_psd(n, &mut rng)
            } else {
                let entries: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
                diag(&entries)
            };
            let picked = greedy_map(&l, k).unwrap();
            let achieved = subset_det(&l, &picked);
            let optimum = exhaustive_map(&l, k);
            assert!(
                achieved <= optimum + 1e-9 + optimum.abs() * 1e-9,
                "greedy {achieved} exceeds optimum {optimum} (n={n}, k={k})"
            );
            if trial % 2 == 1 {
                assert!(
                    (achieved - optimum).abs() <= 1e-9 + optimum.abs() * 1e-9,
                    "diagonal kernel: greedy {achieved} != optimum {optimum}"
                );
            }
        }
    }
}
