//! `fewstep`: command-line harness for the few-step diffusion sampling
//! lab. Exit codes: 0 success, 2 configuration error, 3 runtime error.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{cmd_eval, cmd_flops, cmd_prune, cmd_sample, cmd_sweep, cmd_train};

#[derive(Parser)]
#[command(name = "fewstep", version, about = "Few-step diffusion sampling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy denoiser; writes checkpoints and loss curves.
    Train {
        /// Experiment config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one sampling trajectory; writes structures, trajectory dump and metrics.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Network checkpoint (required for the residual-net backend)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include full coordinates in the trajectory dump
        #[arg(long)]
        coords: bool,
    },
    /// Score a predicted structure file against a target structure file.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// LDDT inclusion radius in Angstroms (default 15)
        #[arg(long)]
        radius: Option<f64>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep sampler mode x step scale x step count; writes a plot-ready CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic FLOPs for the architecture presets over a workload grid.
    Flops {
        /// Preset name (protenix, mini, tiny) or `all`
        #[arg(long)]
        preset: String,
        /// Token count or `start:end:step`
        #[arg(long, default_value = "384")]
        tokens: String,
        /// MSA row count or `start:end:step`
        #[arg(long, default_value = "2048")]
        msa: String,
        /// Atom count
        #[arg(long, default_value_t = 8832)]
        atoms: usize,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prune input-side blocks from a checkpoint, then finetune; reports both.
    Prune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of input-side blocks to remove
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => cmd_train(&config, out.as_deref()),
        Command::Sample {
            config,
            checkpoint,
            out,
            coords,
        } => cmd_sample(&config, checkpoint.as_deref(), out.as_deref(), coords),
        Command::Eval {
            pred,
            target,
            radius,
            out,
        } => cmd_eval(&pred, &target, radius, out.as_deref()),
        Command::Sweep {
            config,
            checkpoint,
            out,
        } => cmd_sweep(&config, checkpoint.as_deref(), out.as_deref()),
        Command::Flops {
            preset,
            tokens,
            msa,
            atoms,
            out,
        } => cmd_flops(&preset, &tokens, &msa, atoms, out.as_deref()),
        Command::Prune {
            config,
            checkpoint,
            k,
            out,
        } => cmd_prune(&config, &checkpoint, k, out.as_deref()),
    };
    if let Err(err) = result {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
