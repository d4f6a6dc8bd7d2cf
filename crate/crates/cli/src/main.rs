//! `distangle` — train, transfer, and evaluate multi-type style
//! disentanglement models from the command line.
//!
//! Exit codes: 0 on success, 2 for configuration or request errors (bad
//! config files, unknown style names, refusals to overwrite), 1 for
//! runtime failures (I/O, numerical trouble, divergence).

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distangle_core::Error;

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "distangle", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus.
    Datagen(commands::DatagenArgs),
    /// Train a sequence autoencoder with style distributions.
    Train(commands::TrainArgs),
    /// Rewrite sentences with selected style values replaced.
    Transfer(commands::TransferArgs),
    /// Run the evaluation battery and write a JSON report.
    Eval(commands::EvalArgs),
    /// Probe latent slices with linear classifiers.
    Probe(commands::ProbeArgs),
    /// Export latent embeddings with 2-D PCA to TSV.
    Export(commands::ExportArgs),
    /// Apply rule-based tense labels to raw JSONL text.
    LabelTense(commands::LabelTenseArgs),
}

fn run(cli: &Cli) -> distangle_core::Result<()> {
    match &cli.command {
        Command::Datagen(args) => commands::cmd_datagen(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Transfer(args) => commands::cmd_transfer(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Probe(args) => commands::cmd_probe(args),
        Command::Export(args) => commands::cmd_export(args),
        Command::LabelTense(args) => commands::cmd_label_tense(args),
    }
}

/// Bad configuration and bad requests exit 2; runtime failures exit 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Schema { .. }
        | Error::Request(_)
        | Error::Parse { .. }
        | Error::Serde(_) => 2,
        Error::Io { .. }
        | Error::Numerical { .. }
        | Error::NonFiniteLoss { .. }
        | Error::CheckpointVersion { .. }
        | Error::MetricUndefined(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
