//! `nice` — pipeline driver for measuring invariability to in-context
//! example choice and acting on it.

mod args;
mod commands;
mod context;

use clap::Parser;

use args::{Cli, Command};
use context::CliResult;

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Validate(input) => commands::validate(input),
        Command::Bins { input, run } => commands::bins(input, run),
        Command::Nice { input, run, backend, instruction, low_threshold, high_threshold } => {
            commands::nice(input, run, backend, instruction, *low_threshold, *high_threshold)
        }
        Command::Select { input, run, selector, variants, quality_scale } => {
            commands::select(input, run, *selector, *variants, *quality_scale)
        }
        Command::Eval { input, run, backend, instruction, demos, permutations } => {
            commands::eval(input, run, backend, instruction, demos, *permutations)
        }
        Command::Perturb { input, run, demos } => commands::perturb(input, run, demos),
        Command::Report { out } => commands::report(out),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        // One machine-readable record on stderr, then the exit code.
        let class = match e.failure {
            context::Failure::Validation => "validation",
            context::Failure::Runtime => "runtime",
        };
        eprintln!(
            "{}",
            serde_json::json!({ "error": format!("{:#}", e.source), "class": class })
        );
        std::process::exit(e.exit_code());
    }
}
