//! Task performance measures, each normalized to higher-is-better in [0, 1].
//!
//! Classification accuracy, whitespace-collapsed exact match, smoothed
//! sentence BLEU, a normalized graph-edit-distance score for QDMR step
//! decompositions, and the two GSM8k output-schema checks (final-answer
//! correctness and reasoning-format correctness).

pub mod bleu;
pub mod qdmr;

use thiserror::Error;

use crate::corpus::{LabelSpace, Measure};

pub use bleu::bleu_score;
pub use qdmr::{graph_edit_distance, qdmr_ged_score, qdmr_parse, QdmrGraph, DEFAULT_GED_NODE_CAP};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("step {step}: reference \"{token}\" points at or beyond the current step")]
    MalformedReference { step: usize, token: String },
    #[error("graph of {nodes} nodes exceeds the exact-search cap of {cap}")]
    GraphTooLarge { nodes: usize, cap: usize },
    #[error("gold output \"{0}\" contains no numeric value")]
    GoldNotNumeric(String),
}

/// A measure value plus a flag for predictions that could not be interpreted
/// under the measure (no matching label, no numeric answer, unparseable
/// steps). Unparseable predictions always score 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOutcome {
    pub value: f64,
    pub unparseable: bool,
}

impl ScoreOutcome {
    fn ok(value: f64) -> Self {
        Self { value, unparseable: false }
    }

    fn unparseable() -> Self {
        Self { value: 0.0, unparseable: true }
    }
}

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// 1 iff the prediction equals the gold label after trimming and case
/// folding. A prediction matching no label at all scores 0 and is flagged
/// unparseable.
pub fn accuracy_score(pred: &str, gold: &str, labels: &LabelSpace) -> ScoreOutcome {
    let p = normalize_label(pred);
    if p == normalize_label(gold) {
        return ScoreOutcome::ok(1.0);
    }
    if labels.labels().iter().any(|l| normalize_label(l) == p) {
        ScoreOutcome::ok(0.0)
    } else {
        ScoreOutcome::unparseable()
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 iff the strings are byte-equal after collapsing whitespace runs to a
/// single space and trimming.
pub fn exact_match_score(pred: &str, gold: &str) -> f64 {
    if collapse_whitespace(pred) == collapse_whitespace(gold) {
        1.0
    } else {
        0.0
    }
}

/// Extracts the last numeric token of a string: optional sign, digits with
/// optional thousands commas, optional decimal part.
pub fn last_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut best: Option<f64> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let mut start = i;
            // A sign directly before the digits counts unless glued to a
            // digit (so "3-2" parses 2, not -2).
            if start > 0
                && (bytes[start - 1] == b'-' || bytes[start - 1] == b'+')
                && (start == 1 || !bytes[start - 2].is_ascii_digit())
            {
                start -= 1;
            }
            let mut end = i;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b',') {
                end += 1;
            }
            if end < bytes.len()
                && bytes[end] == b'.'
                && end + 1 < bytes.len()
                && bytes[end + 1].is_ascii_digit()
            {
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            let token: String = text[start..end].chars().filter(|&c| c != ',').collect();
            if let Ok(v) = token.parse::<f64>() {
                best = Some(v);
            }
            i = end;
        } else {
            i += 1;
        }
    }
    best
}

/// GSM8k final-answer correctness: 1 iff the last numeric value in the
/// response equals gold within 1e-6 relative tolerance. A response with no
/// number scores 0 and is flagged.
pub fn gsm8k_fac(pred_text: &str, gold_number: f64) -> ScoreOutcome {
    match last_number(pred_text) {
        None => ScoreOutcome::unparseable(),
        Some(v) => {
            let equal = if gold_number == 0.0 {
                v.abs() <= 1e-6
            } else {
                ((v - gold_number) / gold_number).abs() <= 1e-6
            };
            ScoreOutcome::ok(if equal { 1.0 } else { 0.0 })
        }
    }
}

fn has_calculation_annotation(text: &str) -> bool {
    let mut rest = text;
    while let Some(open) = rest.find("<<") {
        let after = &rest[open + 2..];
        if let Some(close) = after.find(">>") {
            let inner = &after[..close];
            if inner.contains('=') {
                return true;
            }
            rest = &after[close + 2..];
        } else {
            return false;
        }
    }
    false
}

fn ends_with_final_answer_line(text: &str) -> bool {
    let last_line = match text.trim_end().lines().last() {
        Some(l) => l.trim(),
        None => return false,
    };
    let Some(tail) = last_line.strip_prefix("####") else {
        return false;
    };
    let tail = tail.trim();
    !tail.is_empty() && last_number(tail).is_some() && {
        // The trailer must be just the number, not trailing prose.
        tail.chars()
            .all(|c| c.is_ascii_digit() || c == '.' || c == ',' || c == '-' || c == '+')
    }
}

/// GSM8k reasoning-format correctness: 1 iff the response contains at least
/// one `<<expr=value>>` calculation annotation and ends with a
/// `#### <number>` final-answer line.
pub fn gsm8k_rfc(pred_text: &str) -> f64 {
    if has_calculation_annotation(pred_text) && ends_with_final_answer_line(pred_text) {
        1.0
    } else {
        0.0
    }
}

/// Scores a prediction under the task's measure. For `qdmr_ged` both sides
/// are parsed as step decompositions; for `gsm8k_fac` the gold's last number
/// is the target. Panics never; malformed predictions flag as unparseable.
pub fn score(
    measure: Measure,
    pred: &str,
    gold: &str,
    labels: Option<&LabelSpace>,
) -> ScoreOutcome {
    match measure {
        Measure::Accuracy => match labels {
            Some(ls) => accuracy_score(pred, gold, ls),
            None => ScoreOutcome::unparseable(),
        },
        Measure::ExactMatch => ScoreOutcome::ok(exact_match_score(pred, gold)),
        Measure::Bleu => ScoreOutcome::ok(bleu_score(pred, gold)),
        Measure::QdmrGed => {
            let gold_graph = match qdmr_parse(gold) {
                Ok(g) => g,
                Err(e) => {
                    log::warn!("gold QDMR fails to parse: {e}");
                    return ScoreOutcome::unparseable();
                }
            };
            let pred_graph = match qdmr_parse(pred) {
                Ok(g) => g,
                Err(_) => return ScoreOutcome::unparseable(),
            };
            match qdmr_ged_score(&pred_graph, &gold_graph) {
                Ok(v) => ScoreOutcome::ok(v),
                Err(e) => {
                    log::warn!("graph edit distance skipped: {e}");
                    ScoreOutcome::unparseable()
                }
            }
        }
        Measure::Gsm8kFac => match last_number(gold) {
            Some(target) => gsm8k_fac(pred, target),
            None => {
                log::warn!("gold \"{gold}\" has no numeric value");
                ScoreOutcome::unparseable()
            }
        },
        Measure::Gsm8kRfc => ScoreOutcome::ok(gsm8k_rfc(pred)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> LabelSpace {
        LabelSpace::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn accuracy_folds_case_and_whitespace() {
        let ls = labels(&["positive", "negative"]);
        assert_eq!(accuracy_score("Positive", "positive", &ls), ScoreOutcome::ok(1.0));
        assert_eq!(accuracy_score(" negative ", "negative", &ls), ScoreOutcome::ok(1.0));
        assert_eq!(accuracy_score("positive", "positive", &ls), ScoreOutcome::ok(1.0));
        assert_eq!(accuracy_score("negative", "positive", &ls), ScoreOutcome::ok(0.0));
    }

    #[test]
    fn accuracy_flags_out_of_space_predictions() {
        let ls = labels(&["positive", "negative"]);
        let out = accuracy_score("neutral-ish", "positive", &ls);
        assert_eq!(out.value, 0.0);
        assert!(out.unparseable);
    }

    #[test]
    fn exact_match_collapses_whitespace_runs() {
        assert_eq!(exact_match_score("a [b] c", "a [b] c"), 1.0);
        assert_eq!(exact_match_score("a  [b]\tc", "a [b] c"), 1.0);
        assert_eq!(exact_match_score("a [b] c", "a (b) c"), 0.0);
    }

    #[test]
    fn last_number_handles_signs_commas_decimals() {
        assert_eq!(last_number("altogether 72. #### 72"), Some(72.0));
        assert_eq!(last_number("answer is 71.5"), Some(71.5));
        assert_eq!(last_number("1,234 things"), Some(1234.0));
        assert_eq!(last_number("delta is -3.5 today"), Some(-3.5));
        assert_eq!(last_number("compute 3-2"), Some(2.0));
        assert_eq!(last_number("no digits here"), None);
    }

    #[test]
    fn fac_matches_final_number() {
        assert_eq!(gsm8k_fac("...altogether 72. #### 72", 72.0), ScoreOutcome::ok(1.0));
        assert_eq!(gsm8k_fac("answer is 71.5", 72.0), ScoreOutcome::ok(0.0));
        let out = gsm8k_fac("no digits in sight", 72.0);
        assert!(out.unparseable && out.value == 0.0);
    }

    #[test]
    fn fac_ignores_prefix_text() {
        for prefix in ["", "The answer: ", "Lots of reasoning 12 + 30 then "] {
            assert_eq!(gsm8k_fac(&format!("{prefix}#### 42"), 42.0), ScoreOutcome::ok(1.0));
        }
    }

    #[test]
    fn rfc_requires_annotation_and_trailer() {
        let good = "Natalia sold 48/2 = <<48/2=24>>24 clips in May. \
                    Natalia sold 48+24 = <<48+24=72>>72 clips altogether in April and May.\n#### 72";
        assert_eq!(gsm8k_rfc(good), 1.0);
        assert_eq!(gsm8k_rfc("the answer is 72\n#### 72"), 0.0);
        assert_eq!(gsm8k_rfc("uses <<48/2=24>>24 but never concludes"), 0.0);
        assert_eq!(gsm8k_rfc("<<48/2=24>>24\n#### 72 clips"), 0.0);
    }

    #[test]
    fn dispatcher_covers_every_measure() {
        let ls = labels(&["a", "b"]);
        assert_eq!(score(Measure::Accuracy, "a", "a", Some(&ls)).value, 1.0);
        assert_eq!(score(Measure::ExactMatch, "x y", "x  y", None).value, 1.0);
        assert_eq!(score(Measure::Bleu, "a b c d", "a b c d", None).value, 1.0);
        assert_eq!(
            score(Measure::QdmrGed, "return cities", "return cities", None).value,
            1.0
        );
        assert_eq!(score(Measure::Gsm8kFac, "#### 7", "7", None).value, 1.0);
        assert_eq!(score(Measure::Gsm8kRfc, "<<1+1=2>>2\n#### 2", "", None).value, 1.0);
    }
}
