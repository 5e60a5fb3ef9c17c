//! `altdetect`: synthesize data, train the patch detector, calibrate the
//! image-level deciders and run the evaluation experiments.
//!
//! Exit status is 0 on success, 2 for configuration or usage errors and 1
//! for runtime failures.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use settings::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "altdetect", version, about = "Patch-based detector for retouched and generated face images")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Png,
    Jpeg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

/// Fitted deciders for commands that classify images.
#[derive(Debug, Clone, clap::Args)]
struct DeciderArgs {
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Fixed threshold on the tamper percentage; overrides the calibrated one.
    #[arg(long)]
    threshold: Option<f64>,
    /// SVM model as JSON; overrides the calibrated one.
    #[arg(long)]
    svm_model: Option<PathBuf>,
}

/// Where experiment output goes besides stdout.
#[derive(Debug, Clone, clap::Args)]
struct OutputArgs {
    /// Write the text report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-image decisions as JSON lines here.
    #[arg(long)]
    decisions: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a paired authentic/altered corpus with masks and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of authentic/altered pairs.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        radius: usize,
        #[arg(long, default_value_t = 0.5)]
        region_fraction: f64,
        #[arg(long, default_value_t = 0.03)]
        amplitude: f32,
        /// Leave out probe ids and probe-scaled strength.
        #[arg(long)]
        no_probes: bool,
        #[arg(long, value_enum, default_value = "png")]
        format: FormatArg,
    },
    /// Train a detector on the training split and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the epoch trace as JSON lines here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Where the split manifest goes; defaults next to the checkpoint.
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Fit the threshold and the SVM on validation-split scores.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        deciders: DeciderArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Classify a single image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        deciders: DeciderArgs,
        /// Print the decision as one JSON object.
        #[arg(long)]
        json: bool,
    },
    /// Print threshold accuracies over the grid on one split.
    Gridsearch {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate with and without the shortcut branch.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Train and evaluate on lossless and JPEG-recompressed images.
    Compress {
        #[arg(long)]
        manifest: PathBuf,
        /// First re-store every image as PNG in this directory.
        #[arg(long)]
        png_copy: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
