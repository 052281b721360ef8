//! `eval`: complete and score stored demo sets against the task measure.
//!
//! Demo files with one variant per query are evaluated under order
//! permutations (first one as retrieved); files with multiple variants per
//! query (random selection) are evaluated variant by variant. Per query, the
//! mean and standard deviation over those runs are computed; the report
//! carries the mean of the means and the mean of the standard deviations.

use std::collections::BTreeMap;
use std::path::Path;

use nice_core::metrics;
use nice_core::model::{cached_complete, derive_cell_seed, CompletionCache, CompletionMeta};
use nice_core::prompting::{assemble_prompt, Demo, LabelMode, PromptTemplate};
use nice_core::selectors::{permute_demos, DemoSet};

use crate::args::{BackendArgs, InputArgs, InstructionArgs, RunArgs};
use crate::context::{
    build_backend, build_instruction_from_args, read_jsonl, runtime, validation, write_json_pretty,
    CliResult, DemoRecord, EvalReport, Inputs, QueryEval, RunFingerprint, RunLock,
};

pub fn run(
    input: &InputArgs,
    run: &RunArgs,
    backend_args: &BackendArgs,
    instruction_args: &InstructionArgs,
    demos_path: &Path,
    permutations: usize,
) -> CliResult<()> {
    let inputs = Inputs::load(input)?;
    let _lock = RunLock::acquire(&run.out)?;
    let config_hash = RunFingerprint::new(&inputs, run).hash();

    let num_bins = run.bins.unwrap_or(inputs.task.num_bins);
    let backend = build_backend(backend_args, num_bins)?;
    let instruction = build_instruction_from_args(&inputs.task, instruction_args)?;
    let cache = match &run.cache {
        Some(dir) => Some(CompletionCache::open(dir.clone()).map_err(runtime)?),
        None => None,
    };
    let template = PromptTemplate::default();

    let records: Vec<DemoRecord> = read_jsonl(demos_path)?;
    if records.is_empty() {
        return Err(validation(anyhow::anyhow!("{} holds no demo sets", demos_path.display())));
    }
    let selector = records[0].source;
    let label_mode = records[0].label_mode.unwrap_or(LabelMode::Gold);
    let mut by_query: BTreeMap<String, Vec<DemoRecord>> = BTreeMap::new();
    for record in records {
        if record.config_hash != config_hash {
            return Err(validation(anyhow::anyhow!(
                "demo set for query {} was produced under config {}, current run is {}",
                record.query_id,
                &record.config_hash[..12],
                &config_hash[..12]
            )));
        }
        by_query.entry(record.query_id.clone()).or_default().push(record);
    }

    let mut per_query = Vec::with_capacity(by_query.len());
    let mut prompts_scored = 0usize;
    for (query_id, mut variants) in by_query {
        let query = inputs
            .queries
            .get(&query_id)
            .ok_or_else(|| validation(anyhow::anyhow!("query \"{query_id}\" not in query file")))?;
        variants.sort_by_key(|r| r.variant);

        // One stored variant: vary demonstration order. Several: score each.
        let arms: Vec<(usize, Vec<Demo>)> = if variants.len() == 1 {
            let record = &variants[0];
            (0..permutations.max(1))
                .map(|p| Ok((p, permuted_demos(&inputs, record, p, run.seed)?)))
                .collect::<CliResult<Vec<_>>>()?
        } else {
            variants
                .iter()
                .map(|r| Ok((r.variant, demos_of(&inputs, r)?)))
                .collect::<CliResult<Vec<_>>>()?
        };

        let mut scores = Vec::with_capacity(arms.len());
        for (index, demos) in arms {
            let prompt = assemble_prompt(&instruction, &demos, &query.input, &template);
            let meta = CompletionMeta {
                query_id: &query.id,
                bin_index: 0,
                sample_index: index,
                instruction_kind: instruction.kind,
                gold_output: &query.gold,
            };
            let response = match &cache {
                Some(cache) => cached_complete(cache, &backend, &prompt, &meta),
                None => backend.complete(&prompt, &meta),
            }
            .map_err(runtime)?;
            scores.push(
                metrics::score(
                    inputs.task.measure,
                    &response,
                    &query.gold,
                    inputs.task.label_space.as_ref(),
                )
                .value,
            );
            prompts_scored += 1;
        }

        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let std = if scores.len() > 1 {
            let n = scores.len() as f64;
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        per_query.push(QueryEval { query_id, mean, std });
    }

    let mean_score = per_query.iter().map(|q| q.mean).sum::<f64>() / per_query.len() as f64;
    let mean_std = per_query.iter().map(|q| q.std).sum::<f64>() / per_query.len() as f64;
    let report = EvalReport {
        task: inputs.task.name.clone(),
        selector,
        instruction_kind: instruction.kind,
        label_mode,
        mean_score,
        mean_std,
        queries_used: per_query.len(),
        prompts_scored,
        backend: backend.id(),
        seed: run.seed,
        config_hash,
        per_query,
    };

    let path = run.out.join(format!(
        "eval_{}_{}_{}.json",
        selector_name(selector),
        report.instruction_kind,
        report.label_mode
    ));
    write_json_pretty(&path, &report)?;
    println!(
        "{}: {} + {} ({}): score {:.4} +/- {:.4} over {} queries",
        report.task,
        selector_name(selector),
        report.instruction_kind,
        report.label_mode,
        report.mean_score,
        report.mean_std,
        report.queries_used
    );
    println!("report: {}", path.display());
    Ok(())
}

fn selector_name(kind: nice_core::selectors::SelectorKind) -> &'static str {
    use nice_core::selectors::SelectorKind::*;
    match kind {
        Random => "random",
        TopKDense => "top_k",
        Bm25 => "bm25",
        Dpp => "dpp",
        BinSample => "bin_sample",
    }
}

fn demos_of(inputs: &Inputs, record: &DemoRecord) -> CliResult<Vec<Demo>> {
    record
        .demo_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let ex = inputs
                .pool
                .get(id)
                .ok_or_else(|| validation(anyhow::anyhow!("demo id \"{id}\" is not in the pool")))?;
            let output = match &record.outputs {
                Some(outputs) => outputs[i].clone(),
                None => ex.output.clone(),
            };
            Ok(Demo { input: ex.input.clone(), output })
        })
        .collect()
}

/// Permutation 0 keeps the retrieved order; later ones reshuffle it with a
/// seed derived from (run seed, query, permutation index).
fn permuted_demos(
    inputs: &Inputs,
    record: &DemoRecord,
    permutation: usize,
    seed: u64,
) -> CliResult<Vec<Demo>> {
    let demos = demos_of(inputs, record)?;
    if permutation == 0 {
        return Ok(demos);
    }
    let by_id: BTreeMap<&str, &Demo> = record
        .demo_ids
        .iter()
        .map(String::as_str)
        .zip(demos.iter())
        .collect();
    let set = DemoSet {
        demos: record.demo_ids.clone(),
        source: record.source,
        seed: record.seed,
    };
    let perm_seed = derive_cell_seed(seed, "permute", &record.query_id, record.variant, permutation);
    let shuffled = permute_demos(&set, perm_seed);
    Ok(shuffled.demos.iter().map(|id| by_id[id.as_str()].clone()).collect())
}
