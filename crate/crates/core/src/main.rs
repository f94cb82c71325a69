use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cle_triage::cli::{self, Arch};

#[derive(Parser)]
#[command(
    name = "cle-triage",
    about = "Train, evaluate and benchmark diagnostic-quality classifiers for microscopy-style frames"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic PGM dataset plus manifest.
    GenData {
        #[arg(long)]
        n_per_class: usize,
        /// Square image extent in pixels (minimum 32).
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run 4-fold cross-validation training on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        arch: Arch,
        /// JSON training config; missing fields fall back to defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score test folds with their fold checkpoints and emit metrics + ROC.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoints_dir: PathBuf,
        /// Decision threshold on the diagnostic probability.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Emit per-fold and mean ROC CSVs plus the SVG plot.
    Roc {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoints_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score every frame by normalized histogram entropy.
    EntropyEval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Replay a manifest as a frame stream and measure throughput.
    StreamBench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    cli::init_thread_pool();
    let result = match cli.command {
        Command::GenData { n_per_class, size, seed, out } => {
            cli::cmd_gen_data(n_per_class, size, seed, &out)
        }
        Command::Train { manifest, arch, config, out_dir } => {
            cli::cmd_train(&manifest, arch, config.as_deref(), &out_dir)
        }
        Command::Eval { manifest, checkpoints_dir, threshold, out_dir } => {
            cli::cmd_eval(&manifest, &checkpoints_dir, threshold, &out_dir)
        }
        Command::Roc { manifest, checkpoints_dir, out_dir } => {
            cli::cmd_roc(&manifest, &checkpoints_dir, &out_dir)
        }
        Command::EntropyEval { manifest, threshold, out_dir } => {
            cli::cmd_entropy_eval(&manifest, threshold, &out_dir)
        }
        Command::StreamBench { checkpoint, manifest, batch } => {
            cli::cmd_stream_bench(&checkpoint, &manifest, batch)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
