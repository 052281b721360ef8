//! `report`: render tables from the artifacts in a run directory.
//!
//! Refuses to render when the artifacts carry differing config hashes, which
//! means they did not come from one run bundle.

use std::collections::BTreeSet;
use std::path::Path;

use nice_core::nice::NiceReport;

use crate::context::{validation, CliResult, EvalReport};

pub fn run(out: &Path) -> CliResult<()> {
    let mut nice_reports: Vec<NiceReport> = Vec::new();
    let mut eval_reports: Vec<EvalReport> = Vec::new();

    let entries = std::fs::read_dir(out)
        .map_err(|e| validation(anyhow::anyhow!("cannot read {}: {e}", out.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();

    for name in &names {
        let path = out.join(name);
        if name.starts_with("nice_report_") && name.ends_with(".json") {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| validation(anyhow::anyhow!("reading {}: {e}", path.display())))?;
            nice_reports.push(
                serde_json::from_str(&text)
                    .map_err(|e| validation(anyhow::anyhow!("parsing {}: {e}", path.display())))?,
            );
        } else if name.starts_with("eval_") && name.ends_with(".json") {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| validation(anyhow::anyhow!("reading {}: {e}", path.display())))?;
            eval_reports.push(
                serde_json::from_str(&text)
                    .map_err(|e| validation(anyhow::anyhow!("parsing {}: {e}", path.display())))?,
            );
        }
    }

    if nice_reports.is_empty() && eval_reports.is_empty() {
        return Err(validation(anyhow::anyhow!(
            "no report artifacts found in {}",
            out.display()
        )));
    }

    let hashes: BTreeSet<&str> = nice_reports
        .iter()
        .map(|r| r.provenance.config_hash.as_str())
        .chain(eval_reports.iter().map(|r| r.config_hash.as_str()))
        .collect();
    if hashes.len() > 1 {
        return Err(validation(anyhow::anyhow!(
            "artifacts in {} mix {} different run configs: {}",
            out.display(),
            hashes.len(),
            hashes
                .iter()
                .map(|h| &h[..12.min(h.len())])
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    for report in &nice_reports {
        println!("{}", report.render_table());
    }
    if !eval_reports.is_empty() {
        println!("evaluations (mean of per-query means +/- mean of per-query stds)");
        println!("{:<12} {:<8} {:<16} {:>8} {:>8}", "selector", "instr", "labels", "score", "std");
        for r in &eval_reports {
            println!(
                "{:<12} {:<8} {:<16} {:>8.4} {:>8.4}",
                format!("{:?}", r.selector).to_lowercase(),
                r.instruction_kind.to_string(),
                r.label_mode.to_string(),
                r.mean_score,
                r.mean_std
            );
        }
    }
    Ok(())
}
