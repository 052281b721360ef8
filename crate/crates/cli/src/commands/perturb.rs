//! `perturb`: materialize label-perturbed copies of stored demo sets.

use std::path::Path;

use nice_core::model::derive_cell_seed;
use nice_core::prompting::{perturb_labels, Demo, LabelMode};

use crate::args::{InputArgs, RunArgs};
use crate::context::{
    read_jsonl, validation, write_jsonl, CliResult, DemoRecord, Inputs, RunFingerprint, RunLock,
};

pub fn run(input: &InputArgs, run: &RunArgs, demos_path: &Path) -> CliResult<()> {
    let inputs = Inputs::load(input)?;
    let _lock = RunLock::acquire(&run.out)?;
    let config_hash = RunFingerprint::new(&inputs, run).hash();
    let mode: LabelMode = run.label_mode.into();

    let records: Vec<DemoRecord> = read_jsonl(demos_path)?;
    if records.is_empty() {
        return Err(validation(anyhow::anyhow!("{} holds no demo sets", demos_path.display())));
    }
    let mut perturbed = Vec::with_capacity(records.len());
    for record in records {
        if record.config_hash != config_hash {
            return Err(validation(anyhow::anyhow!(
                "demo set for query {} was produced under config {}, current run is {}",
                record.query_id,
                &record.config_hash[..12],
                &config_hash[..12]
            )));
        }
        let demos: Vec<Demo> = record
            .demo_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let ex = inputs.pool.get(id).ok_or_else(|| {
                    validation(anyhow::anyhow!("demo id \"{id}\" is not in the pool"))
                })?;
                let output = match &record.outputs {
                    Some(outputs) => outputs[i].clone(),
                    None => ex.output.clone(),
                };
                Ok(Demo { input: ex.input.clone(), output })
            })
            .collect::<CliResult<_>>()?;
        let seed = derive_cell_seed(run.seed, "perturb", &record.query_id, record.variant, 0);
        let demos = perturb_labels(&demos, &inputs.task, mode, seed).map_err(validation)?;
        perturbed.push(DemoRecord {
            outputs: Some(demos.into_iter().map(|d| d.output).collect()),
            label_mode: Some(mode),
            ..record
        });
    }

    let path = run.out.join(format!("demos_perturbed_{mode}.jsonl"));
    write_jsonl(&path, &perturbed)?;
    println!("wrote {} perturbed demo sets to {}", perturbed.len(), path.display());
    Ok(())
}
