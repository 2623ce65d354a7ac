//! `echoseg` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::EvalSplit;

#[derive(Parser, Debug)]
#[command(name = "echoseg", version, about = "Spatio-temporal echo segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// Token width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Transformer blocks (multiple of 4).
    #[arg(long)]
    pub depth: Option<usize>,
    /// FacT rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Disable the factorized cores.
    #[arg(long)]
    pub no_fact: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable all augmentations.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic echo dataset.
    Phantom {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        /// Frame size as HxW, e.g. 64x64.
        #[arg(long)]
        size: Option<String>,
        /// Contraction amplitude e.
        #[arg(long)]
        eject: Option<f64>,
        /// Per-video jitter half-width on e.
        #[arg(long)]
        eject_jitter: Option<f64>,
        /// Add an atrium structure.
        #[arg(long)]
        atrium: bool,
    },
    /// Train a model and write metrics.csv plus the best checkpoint.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score a checkpoint (or the ground truth itself) and write a CSV report.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<EvalSplit>,
        /// Score ground-truth masks against themselves instead of a checkpoint.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        /// Override every op's tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Check a single op (the hidden `corrupted_backward` control is accepted).
        #[arg(long)]
        op: Option<String>,
        /// Random input draws per op.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Train and score every variant of one ablation axis.
    Ablate {
        /// order | kernel | ffm | rank | adapter | fusion | backbone
        #[arg(long)]
        axis: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Phantom {
            out,
            config,
            count,
            seed,
            frames,
            size,
            eject,
            eject_jitter,
            atrium,
        } => commands::phantom(commands::PhantomArgs {
            out,
            config,
            count,
            seed,
            frames,
            size,
            eject,
            eject_jitter,
            atrium,
        }),
        Command::Train {
            data,
            config,
            out,
            model,
            train,
        } => commands::train(data, config, out, &model, &train),
        Command::Eval {
            data,
            ckpt,
            report,
            config,
            split,
            ground_truth,
        } => commands::eval(data, ckpt, report, config, split, ground_truth),
        Command::Gradcheck { tol, op, seeds } => commands::gradcheck(tol, op.as_deref(), seeds),
        Command::Ablate {
            axis,
            data,
            out,
            config,
            train,
        } => commands::ablate(&axis, data, out, config, &train),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
