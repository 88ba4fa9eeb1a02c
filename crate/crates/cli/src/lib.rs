//! `affect` command-line tool: synthesize datasets, train, evaluate, predict,
//! and inspect the project's file formats.
//!
//! Exit codes: 0 success, 2 usage/config/format errors, 3 I/O failures,
//! 4 training aborted on a non-finite gradient. Reports and summaries go to
//! stdout as `name=value` lines; diagnostics go to stderr.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affect", version, about = "Frame-level affect model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset and its manifest
    Synth(SynthArgs),
    /// Train a model and keep the best-on-validation checkpoint
    Train(TrainArgs),
    /// Print the metric report of a checkpoint over a manifest
    Eval(EvalArgs),
    /// Write per-frame predictions for feature file(s) in label format
    Predict(PredictArgs),
    /// Describe an AFSQ, AFCK, label, or manifest file
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Spec file with a `[synth]` section; built-in defaults when omitted
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory for features/, labels/, and manifest.tsv
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed (overrides the spec file and AFFECT_SEED)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Config file with `[model]`, `[train]`, and `[augment]` sections
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "train-manifest")]
    pub train_manifest: PathBuf,
    #[arg(long = "val-manifest")]
    pub val_manifest: PathBuf,
    /// va | expr | au | multi
    #[arg(long)]
    pub task: String,
    /// Epoch count (overrides the config file)
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Output directory for checkpoints and the epoch log
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One or two comma-separated AFSQ paths (two are merged)
    #[arg(long)]
    pub features: String,
    /// Output label-format file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub file: PathBuf,
}

fn exit_code_for(err: &affect_core::Error) -> i32 {
    use affect_core::Error;
    match err {
        Error::Io(_) => 3,
        Error::NonFiniteGradient(_) => 4,
        _ => 2,
    }
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::cmd_synth(&args),
        Command::Train(args) => commands::cmd_train(&args),
        Command::Eval(args) => commands::cmd_eval(&args),
        Command::Predict(args) => commands::cmd_predict(&args),
        Command::Inspect(args) => commands::cmd_inspect(&args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use affect_core::Error;

    #[test]
    fn exit_code_scheme() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code_for(&Error::Format {
                offset: 0,
                message: "x".into()
            }),
            2
        );
        assert_eq!(exit_code_for(&Error::data(0, "x")), 2);
        assert_eq!(
            exit_code_for(&Error::Io(std::io::Error::other("x"))),
            3
        );
        assert_eq!(exit_code_for(&Error::NonFiniteGradient("w".into())), 4);
    }
}
