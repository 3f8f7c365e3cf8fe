//! `mcn` — train, evaluate, and export motif convolutional networks.
//!
//! Exit codes: 1 bad configuration, 2 bad data or artifacts, 3 numerical
//! failure (divergence or a tripped density watchdog).

mod manifest;
mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcn_core::McnError;

#[derive(Parser)]
#[command(name = "mcn", version, about = "Motif convolutional networks for node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Dataset directory (graph.edges, labels.tsv, splits.json, optional features.tsv).
    #[arg(long, global = true, default_value = ".")]
    data: PathBuf,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history, report, and manifest.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
        /// Single seed (overrides the config file).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive seed range "A..B"; runs execute sequentially.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Optional predictions TSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export motif adjacencies, transformed matrices, and node counts as TSV.
    Motifs {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        /// Motif kinds to export (repeatable).
        #[arg(long = "motif", default_values = ["edge"])]
        motifs: Vec<String>,
        /// Also export the transformed matrix of this kind.
        #[arg(long)]
        psi: Option<String>,
        /// Step count for the transformed matrix.
        #[arg(long, default_value = "1")]
        k: usize,
    },
    /// Export per-node greedy motif/step choices (CSV) and a DOT rendering
    /// of the first layer's choices.
    ExportAttention {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset directory and print its summary.
    ConvertCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn exit_code_for(err: &McnError) -> u8 {
    match err {
        McnError::InvalidConfig(_) => 1,
        McnError::DensityBudget { .. } | McnError::Diverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            common,
            config,
            out,
            seed,
            seeds,
        } => ops::cmd_train(&common.data, &config, &out, seed, seeds.as_deref(), common.quiet),
        Command::Eval {
            common,
            checkpoint,
            split,
            out,
        } => ops::cmd_eval(&common.data, &checkpoint, &split, out.as_deref(), common.quiet),
        Command::Motifs {
            common,
            out,
            motifs,
            psi,
            k,
        } => ops::cmd_motifs(&common.data, &out, &motifs, psi.as_deref(), k, common.quiet),
        Command::ExportAttention {
            common,
            checkpoint,
            out,
        } => ops::cmd_export_attention(&common.data, &checkpoint, &out, common.quiet),
        Command::ConvertCheck { common } => ops::cmd_convert_check(&common.data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
