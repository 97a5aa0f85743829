use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::Preset;

/// Cross-domain attention imbalance laboratory.
#[derive(Parser, Debug)]
#[command(name = "xattn", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON experiment config merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Starting configuration.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    /// Config override as dotted.key=value (value parsed as JSON when possible).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, env = "XATTN_OUT", default_value = "xattn-out")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a world, both instruction corpora and the evaluation sets.
    Gen(commands::GenArgs),
    /// Train one mixing arm on generated corpora.
    Train(commands::TrainArgs),
    /// Answer evaluation sets and report detection metrics.
    Eval(commands::EvalArgs),
    /// Decompose head outputs into per-span contributions.
    Probe(commands::ProbeArgs),
    /// Evaluate across a grid of steering strengths.
    Sweep(commands::SweepArgs),
    /// Train and compare dataset- and instance-level mixing over seeds.
    Compare(commands::CompareArgs),
    /// Summarize result files found under a directory.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(&cli.common, a),
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Probe(a) => commands::probe(&cli.common, a),
        Command::Sweep(a) => commands::sweep(&cli.common, a),
        Command::Compare(a) => commands::compare(&cli.common, a),
        Command::Report(a) => commands::report(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
