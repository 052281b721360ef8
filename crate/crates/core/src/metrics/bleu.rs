//! Sentence BLEU from scratch.
//!
//! N-grams up to order 4 with uniform 1/4 weights, brevity penalty, and
//! add-one smoothing on the numerator and denominator of every precision of
//! order >= 2. Order-1 precision is unsmoothed, so a hypothesis sharing no
//! unigram with the reference scores 0. Hypotheses shorter than `n` have no
//! order-n n-grams, which under add-one smoothing contributes a factor of 1;
//! this is what makes `bleu_score(x, x) = 1` for any non-empty `x`.

use std::collections::HashMap;

const MAX_ORDER: usize = 4;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Smoothed sentence BLEU of `pred` against `gold`, whitespace-tokenized,
/// in [0, 1]. An empty hypothesis scores 0.
pub fn bleu_score(pred: &str, gold: &str) -> f64 {
    let hyp: Vec<&str> = pred.split_whitespace().collect();
    let reference: Vec<&str> = gold.split_whitespace().collect();
    if hyp.is_empty() {
        return 0.0;
    }

    let mut log_precision_sum = 0.0f64;
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(&hyp, n);
        let ref_counts = ngram_counts(&reference, n);
        let total: usize = hyp_counts.values().sum();
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_precision_sum += precision.ln() / MAX_ORDER as f64;
    }

    let c = hyp.len() as f64;
    let r = reference.len() as f64;
    let brevity_penalty = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (brevity_penalty * log_precision_sum.exp()).clamp(0.0, 1.0)
}
