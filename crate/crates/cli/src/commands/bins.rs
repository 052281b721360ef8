//! `bins`: materialize the per-query bin partitions used by a NICE run.

use nice_core::similarity::partition_bins;

use crate::args::{InputArgs, RunArgs};
use crate::context::{
    runtime, validation, BinRecord, CliResult, Inputs, RunFingerprint, RunLock, write_jsonl,
};

pub fn run(input: &InputArgs, run: &RunArgs) -> CliResult<()> {
    let inputs = Inputs::load(input)?;
    let _lock = RunLock::acquire(&run.out)?;
    let fingerprint = RunFingerprint::new(&inputs, run);
    let config_hash = fingerprint.hash();

    let num_bins = run.bins.unwrap_or(inputs.task.num_bins);
    let sampled = super::sampled_queries(&inputs.queries, run.queries_n, run.seed);
    if sampled.is_empty() {
        return Err(validation(anyhow::anyhow!("query set is empty")));
    }

    let mut records = Vec::with_capacity(sampled.len());
    for query in sampled.iter() {
        let partition = partition_bins(&inputs.pool, query, num_bins)
            .map_err(|e| runtime(anyhow::anyhow!("query {}: {e}", query.id)))?;
        records.push(BinRecord { config_hash: config_hash.clone(), partition });
    }

    let path = run.out.join("bins.jsonl");
    write_jsonl(&path, &records)?;
    println!(
        "wrote {} partitions x {num_bins} bins to {} (config {})",
        records.len(),
        path.display(),
        &config_hash[..12]
    );
    Ok(())
}
