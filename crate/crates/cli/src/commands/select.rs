//! `select`: write per-query demo sets for one of the reference selectors.

use nice_core::model::derive_cell_seed;
use nice_core::selectors::{select_bm25, select_dpp, select_random, select_top_k, Bm25Params};

use crate::args::{InputArgs, RunArgs, SelectorArg};
use crate::context::{
    validation, write_jsonl, CliResult, DemoRecord, Inputs, RunFingerprint, RunLock,
};

pub fn run(
    input: &InputArgs,
    run: &RunArgs,
    selector: SelectorArg,
    variants: usize,
    quality_scale: f64,
) -> CliResult<()> {
    let inputs = Inputs::load(input)?;
    let _lock = RunLock::acquire(&run.out)?;
    let config_hash = RunFingerprint::new(&inputs, run).hash();

    let k = run.k.unwrap_or(inputs.task.k_shots);
    let sampled = super::sampled_queries(&inputs.queries, run.queries_n, run.seed);
    if sampled.is_empty() {
        return Err(validation(anyhow::anyhow!("query set is empty")));
    }
    let variants = if selector == SelectorArg::Random {
        variants.max(1)
    } else {
        if variants > 1 {
            log::info!("{selector:?} is deterministic; emitting one variant per query");
        }
        1
    };

    let mut records = Vec::new();
    for query in sampled.iter() {
        for variant in 0..variants {
            let seed = derive_cell_seed(run.seed, "select-random", &query.id, variant, 0);
            let set = match selector {
                SelectorArg::Random => select_random(&inputs.pool, k, seed),
                SelectorArg::TopK => select_top_k(&inputs.pool, query, k),
                SelectorArg::Bm25 => {
                    select_bm25(&inputs.pool, query, k, &Bm25Params::default())
                }
                SelectorArg::Dpp => select_dpp(&inputs.pool, query, k, quality_scale),
            }
            .map_err(|e| validation(anyhow::anyhow!("query {}: {e}", query.id)))?;
            records.push(DemoRecord {
                config_hash: config_hash.clone(),
                query_id: query.id.clone(),
                variant,
                source: set.source,
                seed: set.seed,
                demo_ids: set.demos,
                outputs: None,
                label_mode: None,
            });
        }
    }

    let name = match selector {
        SelectorArg::Random => "random",
        SelectorArg::TopK => "top_k",
        SelectorArg::Bm25 => "bm25",
        SelectorArg::Dpp => "dpp",
    };
    let path = run.out.join(format!("demos_{name}.jsonl"));
    write_jsonl(&path, &records)?;
    println!(
        "wrote {} demo sets (k = {k}, {variants} variant(s)/query) to {} (config {})",
        records.len(),
        path.display(),
        &config_hash[..12]
    );
    Ok(())
}
