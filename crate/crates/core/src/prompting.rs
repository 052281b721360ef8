//! Instruction taxonomy, prompt assembly, and label perturbations.
//!
//! Instructions are assembled from per-task fragment assets in a fixed order:
//! task definition, label-space enumeration, per-label meanings or syntactic
//! rules, then a closing sentence. The delusive variant reuses the meanings
//! text with a deranged label assignment, so it differs from the honest
//! version only in the label tokens. Prompts are instruction-first, then
//! demonstrations, then the query cue; every function here is pure and
//! byte-deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSpace, TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("instruction kind {kind} requires the \"{fragment}\" fragment")]
    MissingFragment { kind: InstructionKind, fragment: &'static str },
    #[error("instruction kind {kind} does not apply to {task_kind:?} tasks")]
    KindTaskMismatch { kind: InstructionKind, task_kind: TaskKind },
    #[error("label mode {mode} does not apply to {task_kind:?} tasks")]
    ModeTaskMismatch { mode: LabelMode, task_kind: TaskKind },
    #[error("shuffling outputs requires at least 2 demos, got {0}")]
    TooFewDemos(usize),
    #[error("label \"{0}\" is not mapped")]
    UnmappedLabel(String),
    #[error("invalid label map: {0}")]
    BadLabelMap(String),
    #[error("cannot read asset {path}: {message}")]
    AssetUnreadable { path: String, message: String },
}

/// The instruction taxonomy: no instruction, task definition, +label space,
/// +label meanings, +rules (generation only), and the delusive variant with
/// deliberately swapped label meanings (classification only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Ni,
    Td,
    TdLs,
    TdLm,
    TdR,
    Di,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 6] = [
        InstructionKind::Ni,
        InstructionKind::Td,
        InstructionKind::TdLs,
        InstructionKind::TdLm,
        InstructionKind::TdR,
        InstructionKind::Di,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InstructionKind::Ni => "ni",
            InstructionKind::Td => "td",
            InstructionKind::TdLs => "td_ls",
            InstructionKind::TdLm => "td_lm",
            InstructionKind::TdR => "td_r",
            InstructionKind::Di => "di",
        }
    }
}

impl fmt::Display for InstructionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rendered instruction; text is empty exactly for the no-instruction kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: InstructionKind,
    pub text: String,
}

/// One label plus the condition under which it applies, rendered as
/// "If {meaning}, classify it as \"{label}\"."
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMeaning {
    pub label: String,
    pub meaning: String,
}

/// Editable per-task instruction fragments, loaded from a JSON asset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstructionFragments {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_meanings: Vec<LabelMeaning>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closing: Option<String>,
}

const DEFAULT_CLOSING: &str =
    "Below are some demonstrations of the task, look at the examples to understand the task.";

impl InstructionFragments {
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::AssetUnreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| PromptError::AssetUnreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn closing(&self) -> &str {
        self.closing.as_deref().unwrap_or(DEFAULT_CLOSING)
    }

    fn definition(&self, kind: InstructionKind) -> Result<&str, PromptError> {
        self.definition
            .as_deref()
            .filter(|d| !d.trim().is_empty())
            .ok_or(PromptError::MissingFragment { kind, fragment: "definition" })
    }
}

/// Bundled fragment assets, usable out of the box and as format references.
pub fn builtin_fragments(task: &str) -> Option<InstructionFragments> {
    let json = match task {
        "sst2" => include_str!("../assets/instructions/sst2.json"),
        "mtop" => include_str!("../assets/instructions/mtop.json"),
        _ => return None,
    };
    Some(serde_json::from_str(json).expect("bundled asset is well-formed"))
}

fn quoted_label_list(labels: &LabelSpace) -> String {
    let quoted: Vec<String> = labels.labels().iter().map(|l| format!("\"{l}\"")).collect();
    match quoted.len() {
        1 => quoted[0].clone(),
        2 => format!("{} or {}", quoted[0], quoted[1]),
        _ => format!(
            "{} or {}",
            quoted[..quoted.len() - 1].join(", "),
            quoted[quoted.len() - 1]
        ),
    }
}

fn meaning_line(meaning: &str, label: &str) -> String {
    format!("If {meaning}, classify it as \"{label}\".")
}

/// The label each meaning is attributed to under the delusive variant: the
/// next label in label-space order, a fixed-point-free rotation.
fn deranged_label<'a>(labels: &'a LabelSpace, label: &str) -> Result<&'a str, PromptError> {
    let position = labels
        .labels()
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| PromptError::UnmappedLabel(label.to_string()))?;
    Ok(&labels.labels()[(position + 1) % labels.len()])
}

/// Assembles the instruction text for `kind` from the task's fragments.
///
/// Order is fixed: definition, label-space enumeration (td_ls), per-label
/// meaning lines (td_lm, di) or numbered rules (td_r), closing sentence. The
/// delusive kind renders the td_lm text with each meaning assigned to a
/// deranged label.
pub fn build_instruction(
    task: &TaskSpec,
    kind: InstructionKind,
    fragments: &InstructionFragments,
) -> Result<Instruction, PromptError> {
    let classification = task.kind == TaskKind::Classification;
    match kind {
        InstructionKind::Ni => return Ok(Instruction { kind, text: String::new() }),
        InstructionKind::TdLs | InstructionKind::TdLm | InstructionKind::Di if !classification => {
            return Err(PromptError::KindTaskMismatch { kind, task_kind: task.kind })
        }
        InstructionKind::TdR if classification => {
            return Err(PromptError::KindTaskMismatch { kind, task_kind: task.kind })
        }
        _ => {}
    }

    let definition = fragments.definition(kind)?;
    let labels = task.label_space.as_ref();
    let text = match kind {
        InstructionKind::Ni => unreachable!("handled above"),
        InstructionKind::Td => format!("{definition} {}", fragments.closing()),
        InstructionKind::TdLs => {
            let labels = labels.expect("classification tasks carry a label space");
            let base = definition.strip_suffix('.').unwrap_or(definition);
            format!(
                "{base}, into {}. {}",
                quoted_label_list(labels),
                fragments.closing()
            )
        }
        InstructionKind::TdLm | InstructionKind::Di => {
            if fragments.label_meanings.is_empty() {
                return Err(PromptError::MissingFragment { kind, fragment: "label_meanings" });
            }
            let labels = labels.expect("classification tasks carry a label space");
            let mut lines = vec![definition.to_string()];
            for lm in &fragments.label_meanings {
                let target = if kind == InstructionKind::Di {
                    deranged_label(labels, &lm.label)?
                } else {
                    lm.label.as_str()
                };
                lines.push(meaning_line(&lm.meaning, target));
            }
            lines.push(fragments.closing().to_string());
            lines.join("\n")
        }
        InstructionKind::TdR => {
            if fragments.rules.is_empty() {
                return Err(PromptError::MissingFragment { kind, fragment: "rules" });
            }
            let mut text = format!(
                "{definition} To do so, you need to abide by the following rules:\n"
            );
            for (i, rule) in fragments.rules.iter().enumerate() {
                text.push_str(&format!("\n{}. {rule}\n", i + 1));
            }
            text.push('\n');
            text.push_str(fragments.closing());
            text
        }
    };
    Ok(Instruction { kind, text })
}

/// An (input, output) pair as it will be rendered into the prompt; outputs
/// may already be perturbed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub input: String,
    pub output: String,
}

/// Byte patterns for rendering demos and the trailing query cue. `{input}`
/// and `{output}` are the slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub demo_format: String,
    pub separator: String,
    pub query_cue: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            demo_format: "{input}: {output}".into(),
            separator: "\n\n".into(),
            query_cue: "{input}: ".into(),
        }
    }
}

impl PromptTemplate {
    pub fn render_demo(&self, demo: &Demo) -> String {
        self.demo_format
            .replace("{input}", &demo.input)
            .replace("{output}", &demo.output)
    }

    pub fn render_query_cue(&self, input: &str) -> String {
        self.query_cue.replace("{input}", input)
    }
}

/// Concatenates instruction, demos, and query cue. The instruction block is
/// omitted entirely for the no-instruction kind, so the prompt then begins
/// with the first rendered demo.
pub fn assemble_prompt(
    instruction: &Instruction,
    demos: &[Demo],
    query_input: &str,
    template: &PromptTemplate,
) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(demos.len() + 2);
    if instruction.kind != InstructionKind::Ni {
        parts.push(instruction.text.clone());
    }
    for demo in demos {
        parts.push(template.render_demo(demo));
    }
    parts.push(template.render_query_cue(query_input));
    parts.join(&template.separator)
}

/// Output perturbation applied to demos before prompting: keep gold labels,
/// resample each label uniformly (classification), or shuffle the outputs
/// among the demos (generation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Gold,
    RandomLabel,
    ShuffleOutputs,
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Gold => "gold",
            LabelMode::RandomLabel => "random_label",
            LabelMode::ShuffleOutputs => "shuffle_outputs",
        })
    }
}

/// Applies the label perturbation, deterministic per seed. Inputs are never
/// touched; `random_label` draws each output independently and uniformly from
/// the label space, `shuffle_outputs` permutes the existing outputs.
pub fn perturb_labels(
    demos: &[Demo],
    task: &TaskSpec,
    mode: LabelMode,
    seed: u64,
) -> Result<Vec<Demo>, PromptError> {
    match mode {
        LabelMode::Gold => Ok(demos.to_vec()),
        LabelMode::RandomLabel => {
            let labels = task.label_space.as_ref().ok_or(PromptError::ModeTaskMismatch {
                mode,
                task_kind: task.kind,
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(demos
                .iter()
                .map(|d| Demo {
                    input: d.input.clone(),
                    output: labels.labels()[rng.gen_range(0..labels.len())].clone(),
                })
                .collect())
        }
        LabelMode::ShuffleOutputs => {
            if demos.len() < 2 {
                return Err(PromptError::TooFewDemos(demos.len()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut outputs: Vec<String> = demos.iter().map(|d| d.output.clone()).collect();
            outputs.shuffle(&mut rng);
            Ok(demos
                .iter()
                .zip(outputs)
                .map(|(d, output)| Demo { input: d.input.clone(), output })
                .collect())
        }
    }
}

/// A bijective rewrite of the label space, e.g. to induce a novel output
/// schema. Applied consistently to demo outputs and gold outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    mapping: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelMapPair {
    from: String,
    to: String,
}

impl LabelMap {
    /// Builds a map from (from, to) pairs, checking it is injective and its
    /// domain is exactly the label space.
    pub fn new(
        pairs: impl IntoIterator<Item = (String, String)>,
        labels: &LabelSpace,
    ) -> Result<Self, PromptError> {
        let mut mapping = BTreeMap::new();
        let mut images = std::collections::HashSet::new();
        for (from, to) in pairs {
            if !labels.contains(&from) {
                return Err(PromptError::BadLabelMap(format!(
                    "\"{from}\" is not in the label space"
                )));
            }
            if !images.insert(to.clone()) {
                return Err(PromptError::BadLabelMap(format!(
                    "two labels map to \"{to}\""
                )));
            }
            if mapping.insert(from.clone(), to).is_some() {
                return Err(PromptError::BadLabelMap(format!("\"{from}\" mapped twice")));
            }
        }
        for l in labels.labels() {
            if !mapping.contains_key(l) {
                return Err(PromptError::BadLabelMap(format!("\"{l}\" is unmapped")));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(labels: &LabelSpace) -> Self {
        Self {
            mapping: labels
                .labels()
                .iter()
                .map(|l| (l.clone(), l.clone()))
                .collect(),
        }
    }

    /// Loads a JSON array of `{"from": label, "to": label}` pairs.
    pub fn load(path: &Path, labels: &LabelSpace) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::AssetUnreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let pairs: Vec<LabelMapPair> =
            serde_json::from_str(&text).map_err(|e| PromptError::AssetUnreadable {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Self::new(pairs.into_iter().map(|p| (p.from, p.to)), labels)
    }

    pub fn apply(&self, label: &str) -> Result<&str, PromptError> {
        self.mapping
            .get(label)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnmappedLabel(label.to_string()))
    }
}

/// Bundled induced-schema label maps (keyed by task name).
pub fn builtin_label_map(task: &str, labels: &LabelSpace) -> Option<Result<LabelMap, PromptError>> {
    let json = match task {
        "sst2" => include_str!("../assets/label_maps/sst2_induced.json"),
        "sst5" => include_str!("../assets/label_maps/sst5_induced.json"),
        _ => return None,
    };
    let pairs: Vec<LabelMapPair> = serde_json::from_str(json).expect("bundled asset is well-formed");
    Some(LabelMap::new(pairs.into_iter().map(|p| (p.from, p.to)), labels))
}

/// Rewrites demo outputs and gold outputs under the map.
pub fn apply_label_map(
    demos: &[Demo],
    gold_labels: &[String],
    map: &LabelMap,
) -> Result<(Vec<Demo>, Vec<String>), PromptError> {
    let demos = demos
        .iter()
        .map(|d| {
            Ok(Demo {
                input: d.input.clone(),
                output: map.apply(&d.output)?.to_string(),
            })
        })
        .collect::<Result<Vec<_>, PromptError>>()?;
    let gold = gold_labels
        .iter()
        .map(|g| map.apply(g).map(str::to_string))
        .collect::<Result<Vec<_>, PromptError>>()?;
    Ok((demos, gold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Measure;
    use std::collections::HashMap;

    fn sst2_task() -> TaskSpec {
        TaskSpec {
            name: "sst2".into(),
            kind: TaskKind::Classification,
            label_space: Some(
                LabelSpace::new(vec!["positive".into(), "negative".into()]).unwrap(),
            ),
            measure: Measure::Accuracy,
            k_shots: 4,
            num_bins: 10,
        }
    }

    fn mtop_task() -> TaskSpec {
        TaskSpec {
            name: "mtop".into(),
            kind: TaskKind::Generation,
            label_space: None,
            measure: Measure::ExactMatch,
            k_shots: 4,
            num_bins: 10,
        }
    }

    #[test]
    fn ni_is_empty() {
        let instr =
            build_instruction(&sst2_task(), InstructionKind::Ni, &InstructionFragments::default())
                .unwrap();
        assert_eq!(instr.text, "");
    }

    #[test]
    fn sst2_task_definition_matches_shipped_wording() {
        let fragments = builtin_fragments("sst2").unwrap();
        let instr = build_instruction(&sst2_task(), InstructionKind::Td, &fragments).unwrap();
        assert_eq!(
            instr.text,
            "Your task is to classify the given movie review based on the sentiment expressed. \
             Below are some demonstrations of the task, look at the examples to understand the task."
        );
    }

    #[test]
    fn sst2_label_space_enumerates_labels() {
        let fragments = builtin_fragments("sst2").unwrap();
        let instr = build_instruction(&sst2_task(), InstructionKind::TdLs, &fragments).unwrap();
        assert_eq!(
            instr.text,
            "Your task is to classify the given movie review based on the sentiment expressed, \
             into \"positive\" or \"negative\". Below are some demonstrations of the task, look \
             at the examples to understand the task."
        );
    }

    #[test]
    fn sst2_delusive_swaps_meaning_assignment() {
        let fragments = builtin_fragments("sst2").unwrap();
        let honest = build_instruction(&sst2_task(), InstructionKind::TdLm, &fragments).unwrap();
        let delusive = build_instruction(&sst2_task(), InstructionKind::Di, &fragments).unwrap();
        assert!(honest
            .text
            .contains("is positive, classify it as \"positive\""));
        assert!(delusive
            .text
            .contains("is positive, classify it as \"negative\""));
        assert!(delusive
            .text
            .contains("is negative, classify it as \"positive\""));
        // Difference is confined to the label tokens.
        assert_eq!(
            honest.text.replace("\"positive\"", "L").replace("\"negative\"", "L"),
            delusive.text.replace("\"positive\"", "L").replace("\"negative\"", "L"),
        );
    }

    #[test]
    fn mtop_rules_are_numbered() {
        let fragments = builtin_fragments("mtop").unwrap();
        let instr = build_instruction(&mtop_task(), InstructionKind::TdR, &fragments).unwrap();
        assert!(instr.text.starts_with(
            "You will be given a user utterance in a specific domain and a particular language."
        ));
        assert!(instr.text.contains("\n1. Identify the intent"));
        assert!(instr.text.contains("\n5. Apply the same grammar rules"));
        assert!(instr
            .text
            .ends_with("look at the examples to understand the task and answer the query at the end."));
    }

    #[test]
    fn kind_task_mismatches_are_rejected() {
        let fragments = builtin_fragments("sst2").unwrap();
        assert!(matches!(
            build_instruction(&sst2_task(), InstructionKind::TdR, &fragments),
            Err(PromptError::KindTaskMismatch { .. })
        ));
        let fragments = builtin_fragments("mtop").unwrap();
        for kind in [InstructionKind::TdLs, InstructionKind::TdLm, InstructionKind::Di] {
            assert!(matches!(
                build_instruction(&mtop_task(), kind, &fragments),
                Err(PromptError::KindTaskMismatch { .. })
            ));
        }
    }

    #[test]
    fn missing_fragments_are_named() {
        let empty = InstructionFragments::default();
        match build_instruction(&sst2_task(), InstructionKind::Td, &empty) {
            Err(PromptError::MissingFragment { fragment: "definition", .. }) => {}
            other => panic!("expected MissingFragment(definition), got {other:?}"),
        }
        let def_only = InstructionFragments {
            definition: Some("Classify the text.".into()),
            ..Default::default()
        };
        assert!(matches!(
            build_instruction(&sst2_task(), InstructionKind::TdLm, &def_only),
            Err(PromptError::MissingFragment { fragment: "label_meanings", .. })
        ));
        assert!(matches!(
            build_instruction(&mtop_task(), InstructionKind::TdR, &def_only),
            Err(PromptError::MissingFragment { fragment: "rules", .. })
        ));
    }

    fn demos(pairs: &[(&str, &str)]) -> Vec<Demo> {
        pairs
            .iter()
            .map(|(i, o)| Demo { input: (*i).to_string(), output: (*o).to_string() })
            .collect()
    }

    #[test]
    fn ni_prompt_starts_with_first_demo() {
        let tmpl = PromptTemplate::default();
        let instr = Instruction { kind: InstructionKind::Ni, text: String::new() };
        let ds = demos(&[("great movie", "positive"), ("dull plot", "negative")]);
        let prompt = assemble_prompt(&instr, &ds, "fresh and funny", &tmpl);
        assert_eq!(
            prompt,
            "great movie: positive\n\ndull plot: negative\n\nfresh and funny: "
        );
        assert!(prompt.starts_with(&tmpl.render_demo(&ds[0])));
    }

    #[test]
    fn zero_shot_prompt_is_instruction_then_cue() {
        let tmpl = PromptTemplate::default();
        let instr = Instruction { kind: InstructionKind::Td, text: "Classify the review.".into() };
        let prompt = assemble_prompt(&instr, &[], "fine acting", &tmpl);
        assert_eq!(prompt, "Classify the review.\n\nfine acting: ");
    }

    #[test]
    fn assembly_is_deterministic() {
        let tmpl = PromptTemplate::default();
        let instr = Instruction { kind: InstructionKind::Td, text: "Classify.".into() };
        let ds = demos(&[("a", "x"), ("b", "y")]);
        let p1 = assemble_prompt(&instr, &ds, "q", &tmpl);
        let p2 = assemble_prompt(&instr, &ds, "q", &tmpl);
        assert_eq!(p1, p2);
    }

    #[test]
    fn gold_mode_is_identity() {
        let ds = demos(&[("a", "positive"), ("b", "negative")]);
        let got = perturb_labels(&ds, &sst2_task(), LabelMode::Gold, 123).unwrap();
        assert_eq!(got, ds);
    }

    #[test]
    fn shuffle_preserves_output_multiset() {
        let ds = demos(&[("a", "A"), ("b", "B"), ("c", "C")]);
        for seed in 0..50 {
            let got = perturb_labels(&ds, &mtop_task(), LabelMode::ShuffleOutputs, seed).unwrap();
            let mut outputs: Vec<&str> = got.iter().map(|d| d.output.as_str()).collect();
            outputs.sort_unstable();
            assert_eq!(outputs, ["A", "B", "C"]);
            let inputs: Vec<&str> = got.iter().map(|d| d.input.as_str()).collect();
            assert_eq!(inputs, ["a", "b", "c"]);
        }
    }

    #[test]
    fn random_label_stays_in_label_space_and_is_uniform() {
        let task = sst2_task();
        let ds = demos(&[("a", "positive"), ("b", "positive"), ("c", "positive"), ("d", "positive")]);
        let mut counts: HashMap<String, usize> = HashMap::new();
        let trials = 1000u64;
        for seed in 0..trials {
            for d in perturb_labels(&ds, &task, LabelMode::RandomLabel, seed).unwrap() {
                assert!(task.label_space.as_ref().unwrap().contains(&d.output));
                *counts.entry(d.output).or_default() += 1;
            }
        }
        let total = (trials as usize * ds.len()) as f64;
        for label in ["positive", "negative"] {
            let freq = counts[label] as f64 / total;
            assert!((freq - 0.5).abs() < 0.05, "{label} frequency {freq}");
        }
    }

    #[test]
    fn perturbation_mode_errors() {
        assert!(matches!(
            perturb_labels(&demos(&[("a", "x")]), &mtop_task(), LabelMode::RandomLabel, 0),
            Err(PromptError::ModeTaskMismatch { .. })
        ));
        assert!(matches!(
            perturb_labels(&demos(&[("a", "x")]), &mtop_task(), LabelMode::ShuffleOutputs, 0),
            Err(PromptError::TooFewDemos(1))
        ));
    }

    #[test]
    fn builtin_sst2_label_map_induces_schema() {
        let labels = LabelSpace::new(vec!["positive".into(), "negative".into()]).unwrap();
        let map = builtin_label_map("sst2", &labels).unwrap().unwrap();
        assert_eq!(map.apply("positive").unwrap(), "POSITIVE");
        assert_eq!(map.apply("negative").unwrap(), "negative");
    }

    #[test]
    fn builtin_sst5_label_map_induces_schema() {
        let labels = LabelSpace::new(
            ["very negative", "negative", "neutral", "positive", "very positive"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap();
        let map = builtin_label_map("sst5", &labels).unwrap().unwrap();
        assert_eq!(map.apply("neutral").unwrap(), "NeUtRaL");
        assert_eq!(map.apply("very positive").unwrap(), "VERY POSITIVE");
        assert_eq!(map.apply("negative").unwrap(), "negative");
    }

    #[test]
    fn label_map_applies_to_demos_and_gold() {
        let labels = LabelSpace::new(vec!["positive".into(), "negative".into()]).unwrap();
        let map = builtin_label_map("sst2", &labels).unwrap().unwrap();
        let ds = demos(&[("a", "positive"), ("b", "negative")]);
        let gold = vec!["positive".to_string()];
        let (mapped, gold) = apply_label_map(&ds, &gold, &map).unwrap();
        assert_eq!(mapped[0].output, "POSITIVE");
        assert_eq!(mapped[1].output, "negative");
        assert_eq!(gold, ["POSITIVE"]);

        let identity = LabelMap::identity(&labels);
        let (same, _) = apply_label_map(&ds, &[], &identity).unwrap();
        assert_eq!(same, ds);
    }

    #[test]
    fn label_map_rejects_unknown_and_noninjective() {
        let labels = LabelSpace::new(vec!["a".into(), "b".into()]).unwrap();
        let map = LabelMap::identity(&labels);
        assert!(matches!(map.apply("c"), Err(PromptError::UnmappedLabel(_))));
        assert!(LabelMap::new(
            vec![("a".into(), "X".into()), ("b".into(), "X".into())],
            &labels
        )
        .is_err());
        assert!(LabelMap::new(vec![("a".into(), "X".into())], &labels).is_err());
    }

    proptest::proptest! {
        #[test]
        fn shuffle_multiset_invariant(seed in 0u64..500, n in 2usize..8) {
            let ds: Vec<Demo> = (0..n)
                .map(|i| Demo { input: format!("in{i}"), output: format!("out{i}") })
                .collect();
            let got = perturb_labels(&ds, &mtop_task(), LabelMode::ShuffleOutputs, seed).unwrap();
            let mut outputs: Vec<String> = got.iter().map(|d| d.output.clone()).collect();
            outputs.sort();
            let mut want: Vec<String> = ds.iter().map(|d| d.output.clone()).collect();
            want.sort();
            proptest::prop_assert_eq!(outputs, want);
        }

        #[test]
        fn distinct_demo_lists_render_distinct_prompts(
            a in proptest::collection::vec(("[a-z]{1,6}", "[a-z]{1,6}"), 1..4),
            b in proptest::collection::vec(("[a-z]{1,6}", "[a-z]{1,6}"), 1..4),
        ) {
            let to_demos = |v: &Vec<(String, String)>| -> Vec<Demo> {
                v.iter().map(|(i, o)| Demo { input: i.clone(), output: o.clone() }).collect()
            };
            let tmpl = PromptTemplate::default();
            let instr = Instruction { kind: InstructionKind::Ni, text: String::new() };
            let pa = assemble_prompt(&instr, &to_demos(&a), "q", &tmpl);
            let pb = assemble_prompt(&instr, &to_demos(&b), "q", &tmpl);
            if a != b {
                proptest::prop_assert_ne!(pa, pb);
            } else {
                proptest::prop_assert_eq!(pa, pb);
            }
        }
    }
}
