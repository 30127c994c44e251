//! `a4net`: one binary for the whole workflow chain: synthesize a dataset,
//! train, evaluate, probe frozen features, run the attribute ablation, and
//! render Grad-CAM overlays. Every subcommand takes `--out` and leaves its
//! artifacts (checkpoint, metrics text, effective config, log) in that run
//! directory; relative `--out` paths are rooted at `$A4NET_RUN_ROOT` when the
//! variable is set.

pub mod config;
pub mod run;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub use config::{ConfigOverrides, DataPaths, Preset, RunConfig};

const AFTER_HELP: &str = "Environment:\n  A4NET_RUN_ROOT  directory prefix for relative --out paths\n\nExit codes: 0 success, 1 usage or configuration error, 2 runtime failure.";

#[derive(Parser)]
#[command(
    name = "a4net",
    version,
    about = "Attribute-aware visual emotion network workflows",
    after_help = AFTER_HELP,
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (images plus manifest)
    Synth(run::SynthArgs),
    /// Train a model and write checkpoint, metrics, and config
    Train(run::TrainArgs),
    /// Evaluate a checkpoint on a manifest
    Eval(run::EvalArgs),
    /// Fit a linear probe on frozen fused features
    Probe(run::ProbeArgs),
    /// Train and evaluate every requested attribute subset
    Ablate(run::AblateArgs),
    /// Render a Grad-CAM overlay for one image
    Explain(run::ExplainArgs),
}

/// Parse argv and run the selected workflow, returning the process exit code:
/// 0 success, 1 usage/configuration error, 2 runtime failure.
pub fn dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Command::Synth(args) => run::synth(&args),
        Command::Train(args) => run::train(&args),
        Command::Eval(args) => run::eval(&args),
        Command::Probe(args) => run::probe(&args),
        Command::Ablate(args) => run::ablate(&args),
        Command::Explain(args) => run::explain(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_usage() {
                1
            } else {
                2
            }
        }
    }
}
