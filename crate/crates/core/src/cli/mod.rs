//! Command-line pipeline: synth, train_retrieval, build_recall, train_caption,
//! optimize_cider, generate, evaluate.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or missing input, 3 incompatible checkpoint.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::data::{DataError, Split};
use crate::metrics::MetricError;
use crate::objectives::TrainError;
use crate::tensor::{CheckpointError, TensorError};

pub use settings::{Preset, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input file: {}", .0.display())]
    Missing(PathBuf),
    #[error("incompatible checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Missing(_) => 2,
            CliError::Checkpoint { .. } => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(m) => CliError::Usage(m),
            DataError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::Missing(path),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::MissingRecall(_) => CliError::Usage(format!("{}; rerun build_recall", e)),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    pub(crate) fn checkpoint(path: &std::path::Path, e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                CliError::Missing(path.to_path_buf())
            }
            other => CliError::Checkpoint { path: path.to_path_buf(), reason: other.to_string() },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "recall", version, about = "Retrieval-augmented image captioning pipeline")]
pub struct Cli {
    /// Directory that holds every input and output file.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,

    /// Named defaults for every setting.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,

    /// Plain key=value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one setting, e.g. `--set xe_epochs=5`. May be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset, caption corpus and vocabulary.
    #[command(name = "synth")]
    Synth {
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train the image-caption retrieval model.
    #[command(name = "train_retrieval", alias = "train-retrieval")]
    TrainRetrieval {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recall words for every image from its top-K retrieved corpus captions.
    #[command(name = "build_recall", alias = "build-recall")]
    BuildRecall {
        /// Captions retrieved per image.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Cross-entropy training of the captioner.
    #[command(name = "train_caption", alias = "train-caption")]
    TrainCaption {
        /// Train the ablation with the switch clamped to zero.
        #[arg(long)]
        no_copy: bool,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint to write (default `caption_xe.ckpt`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Self-critical CIDEr optimization starting from a cross-entropy checkpoint.
    #[command(name = "optimize_cider", alias = "optimize-cider")]
    OptimizeCider {
        /// Weight of the switch-off term.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Starting checkpoint (default `caption_xe.ckpt`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Checkpoint to write (default `caption_rl.ckpt`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode captions for one split.
    #[command(name = "generate")]
    Generate {
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value_t = Split::Test)]
        split: Split,
        /// Caption checkpoint (default `caption_rl.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output file (default `captions.jsonl`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Include per-step switch values and copy attention.
        #[arg(long)]
        dump_traces: bool,
    },
    /// Score captions against the references of one split.
    #[command(name = "evaluate")]
    Evaluate {
        /// Captions file from `generate`; decodes from the checkpoint when absent.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value_t = Split::Test)]
        split: Split,
        /// Report file (default `report.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Preset, then config file, then `--set` pairs, then dedicated flags.
pub fn resolve_settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::preset(cli.preset);
    if let Some(path) = &cli.config {
        s.apply_file(path)?;
    }
    for pair in &cli.overrides {
        s.apply_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    match &cli.command {
        Command::Synth { vocab, images, noise } => {
            s.vocab = vocab.unwrap_or(s.vocab);
            s.images = images.unwrap_or(s.images);
            s.noise = noise.unwrap_or(s.noise);
        }
        Command::TrainRetrieval { epochs } => s.ret_epochs = epochs.unwrap_or(s.ret_epochs),
        Command::BuildRecall { k } => s.k = k.unwrap_or(s.k),
        Command::TrainCaption { no_copy, epochs, .. } => {
            s.copy &= !no_copy;
            s.xe_epochs = epochs.unwrap_or(s.xe_epochs);
        }
        Command::OptimizeCider { lambda, epochs, .. } => {
            s.lambda = lambda.unwrap_or(s.lambda);
            s.rl_epochs = epochs.unwrap_or(s.rl_epochs);
        }
        Command::Generate { beam, .. } | Command::Evaluate { beam, .. } => s.beam = beam.unwrap_or(s.beam),
    }
    Ok(s)
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match resolve_settings(&cli).and_then(|s| commands::execute(&cli, &s)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
