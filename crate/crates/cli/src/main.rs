//! `attmerge`: synthetic embedding-stack datasets, staged training of
//! layer-merging countermeasures, EER evaluation, merge-weight inspection,
//! and gradient checking, from one config file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attmerge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic layer-band dataset (stacks + key + manifest).
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the output directory if it already exists.
        #[arg(long)]
        force: bool,
    },
    /// Train a merge + head pipeline on a stack dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the checkpoint and training log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score datasets with a checkpoint and report per-dataset EER plus
    /// the average.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel scoring workers (scoring only; 1 = fully serial).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Dataset directories to evaluate.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Emit per-layer merge weights as CSV.
    InspectWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; required for attentive-merge checkpoints,
        /// whose gates depend on the input.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every trainable block's gradients.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Corrupt the named block's backward pass (negative control for
        /// harness tests).
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            force,
        } => commands::gen_data::run(&config, &out, seed, force),
        Command::Train { config, out, seed } => commands::train::run(&config, &out, seed),
        Command::Evaluate {
            config,
            checkpoint,
            out,
            workers,
            datasets,
        } => commands::evaluate::run(&config, &checkpoint, &out, workers, &datasets),
        Command::InspectWeights {
            checkpoint,
            dataset,
            out,
        } => commands::inspect::run(&checkpoint, dataset.as_deref(), out.as_deref()),
        Command::Gradcheck {
            config,
            seed,
            fault,
        } => commands::gradcheck::run(&config, seed, fault.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
