//! `tvnet`: train, evaluate, predict, generate synthetic data, compute
//! dataset statistics and run the ablation grid.
//!
//! Every setting is a flat config key. Keys come from an optional
//! `--config FILE` and are overridden by `--key value` pairs on the
//! command line.

mod commands;
mod overrides;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvnet::ErrorKind;

#[derive(Parser)]
#[command(
    name = "tvnet",
    version,
    about = "Tiny-object microscopy segmentation with TVNet"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Settings {
    /// Settings as `--key value` pairs (see the README for the keys).
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    args: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on `data_root`.
    Train(Settings),
    /// Score a directory of predictions against ground truth.
    Eval(Settings),
    /// Write probability maps for every image of `image_dir`.
    Predict(Settings),
    /// Generate a synthetic dataset.
    Synth(Settings),
    /// Object and attribute statistics of a dataset split.
    Stats(Settings),
    /// Train and score the four HRF/FBA combinations.
    Ablate(Settings),
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, settings) = match &cli.command {
        Command::Train(s) => ("train", s),
        Command::Eval(s) => ("eval", s),
        Command::Predict(s) => ("predict", s),
        Command::Synth(s) => ("synth", s),
        Command::Stats(s) => ("stats", s),
        Command::Ablate(s) => ("ablate", s),
    };
    match commands::run(name, &settings.args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
