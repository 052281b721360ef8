//! `nice`: run the full estimation pipeline and write the report.

use nice_core::model::CompletionCache;
use nice_core::nice::{Estimator, EstimatorConfig, Thresholds};
use nice_core::prompting::PromptTemplate;

use crate::args::{BackendArgs, InputArgs, InstructionArgs, RunArgs};
use crate::context::{
    build_backend, build_instruction_from_args, runtime, write_json_pretty, CliResult, Inputs,
    RunFingerprint, RunLock,
};

#[allow(clippy::too_many_arguments)]
pub fn run(
    input: &InputArgs,
    run: &RunArgs,
    backend_args: &BackendArgs,
    instruction_args: &InstructionArgs,
    low_threshold: f64,
    high_threshold: f64,
) -> CliResult<()> {
    let inputs = Inputs::load(input)?;
    let _lock = RunLock::acquire(&run.out)?;
    let fingerprint = RunFingerprint::new(&inputs, run);
    let config_hash = fingerprint.hash();

    let num_bins = run.bins.unwrap_or(inputs.task.num_bins);
    let backend = build_backend(backend_args, num_bins)?;
    let instruction = build_instruction_from_args(&inputs.task, instruction_args)?;
    let cache = match &run.cache {
        Some(dir) => Some(CompletionCache::open(dir.clone()).map_err(runtime)?),
        None => None,
    };

    let config = EstimatorConfig {
        num_queries: run.queries_n,
        samples_per_bin: run.samples,
        k_shots: run.k.unwrap_or(inputs.task.k_shots),
        num_bins,
        seed: run.seed,
        label_mode: run.label_mode.into(),
    };
    let template = PromptTemplate::default();
    let estimator = Estimator {
        task: &inputs.task,
        pool: &inputs.pool,
        template: &template,
        backend: &backend,
        cache: cache.as_ref(),
        config: &config,
        thresholds: Thresholds { low: low_threshold, high: high_threshold },
        config_hash: config_hash.clone(),
    };

    let report = estimator.run_nice(&instruction, &inputs.queries).map_err(runtime)?;

    let stem = format!("nice_report_{}", report.instruction_kind);
    let json_path = run.out.join(format!("{stem}.json"));
    write_json_pretty(&json_path, &report)?;
    let table = report.render_table();
    std::fs::write(run.out.join(format!("{stem}.txt")), &table)
        .map_err(|e| runtime(anyhow::anyhow!("writing table: {e}")))?;

    print!("{table}");
    if let Some(cache) = &cache {
        log::info!(
            "cache: {} hits, {} misses; backend calls: {}",
            cache.hits(),
            cache.misses(),
            backend.calls()
        );
    }
    println!("report: {}", json_path.display());
    Ok(())
}
