//! `validate`: load and cross-check every input, print a feasibility summary.

use crate::args::InputArgs;
use crate::context::{CliResult, Inputs};

pub fn run(args: &InputArgs) -> CliResult<()> {
    let inputs = Inputs::load(args)?;
    let task = &inputs.task;

    println!("task: {} ({:?}, measure {:?})", task.name, task.kind, task.measure);
    println!("pool: {} examples", inputs.pool.len());
    println!("queries: {}", inputs.queries.len());
    match inputs.pool.embedding_dim() {
        Some(d) => println!("embedding dimension: {d}"),
        None => println!("embedding dimension: none declared"),
    }
    let missing = inputs.missing_embeddings();
    if missing > 0 {
        println!("embeddings missing: {missing} (similarity stages will fail until provided)");
    } else {
        println!("embeddings missing: 0");
    }

    let min_bin = inputs.pool.len() / task.num_bins;
    let feasible = inputs.pool.len() >= task.num_bins && min_bin >= task.k_shots;
    println!(
        "bins: {} x >= {min_bin} examples; k = {} per draw: {}",
        task.num_bins,
        task.k_shots,
        if feasible { "feasible" } else { "INFEASIBLE" }
    );
    if !feasible {
        return Err(crate::context::validation(anyhow::anyhow!(
            "pool of {} cannot fill {} bins with at least k = {} examples each",
            inputs.pool.len(),
            task.num_bins,
            task.k_shots
        )));
    }
    println!("ok");
    Ok(())
}
