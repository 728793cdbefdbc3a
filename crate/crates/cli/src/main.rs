//! `bitcover`: extract frame-size series from video, generate synthetic
//! datasets, train and evaluate the classifier.
//!
//! Machine-readable results go to stdout as one JSON object per line; human
//! summaries go to stderr. Exit status is 0 on success, 2 for bad input and
//! 3 when training diverges.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "BITCOVER_WORKERS";

#[derive(Parser)]
#[command(name = "bitcover", version, about = "Classify videos from compressed frame sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CodecArg {
    Auto,
    Avc,
    Hevc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ContainerArg {
    Auto,
    Annexb,
    Mp4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Zscore,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    None,
    Dtw,
}

#[derive(Subcommand)]
enum Command {
    /// Write the per-frame sizes of a video file as FSTS.
    Extract {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        codec: CodecArg,
        #[arg(long, value_enum, default_value = "auto")]
        container: ContainerArg,
        /// Charge MP4 container bytes to frames so sizes sum to the file size.
        #[arg(long)]
        with_overhead: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a synthetic benchmark as FSTS files plus a manifest.
    Gen {
        #[arg(long, default_value_t = 11)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        clips: usize,
        #[arg(long, default_value_t = 1200)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a classifier on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Validation manifest; without it the manifest is split
        /// train/val/test and the three parts are written next to the model.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long)]
        n_frames: usize,
        #[arg(long, value_enum, default_value = "zscore")]
        norm: NormArg,
        /// TOML file overriding training and architecture settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Predict the class of FSTS or video files.
    Classify {
        #[arg(long)]
        model: PathBuf,
        /// Window length; the whole series when omitted.
        #[arg(long)]
        n_frames: Option<usize>,
        #[arg(long, value_enum, default_value = "zscore")]
        norm: NormArg,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Evaluate a model on a manifest, optionally against the DTW baseline.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n_frames: usize,
        #[arg(long, value_enum, default_value = "zscore")]
        norm: NormArg,
        #[arg(long, value_enum, default_value = "none")]
        baseline: BaselineArg,
        /// Reference set for the DTW baseline.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
    },
    /// Inter- and intra-class KL divergence of frame sizes.
    Kld {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time batch inference and report the real-time factor.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n_frames: usize,
        #[arg(long, value_enum, default_value = "zscore")]
        norm: NormArg,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn init_workers() {
    let n = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // Only fails if a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_workers();
    let result = match cli.command {
        Command::Extract {
            input,
            codec,
            container,
            with_overhead,
            output,
        } => commands::extract(&input, codec, container, with_overhead, &output),
        Command::Gen {
            classes,
            clips,
            frames,
            seed,
            output,
        } => commands::gen(classes, clips, frames, seed, &output),
        Command::Train {
            manifest,
            val_manifest,
            n_frames,
            norm,
            config,
            output,
        } => commands::train(&manifest, val_manifest.as_deref(), n_frames, norm, config.as_deref(), &output),
        Command::Classify {
            model,
            n_frames,
            norm,
            inputs,
        } => commands::classify(&model, n_frames, norm, &inputs),
        Command::Eval {
            manifest,
            model,
            n_frames,
            norm,
            baseline,
            train_manifest,
            fps,
        } => commands::eval(&manifest, &model, n_frames, norm, baseline, train_manifest.as_deref(), fps),
        Command::Kld { manifest, bins, seed } => commands::kld(&manifest, bins, seed),
        Command::Bench {
            manifest,
            model,
            n_frames,
            norm,
            repeat,
            fps,
            batch_size,
        } => commands::bench(&manifest, &model, n_frames, norm, repeat, fps, batch_size),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(e) | Failure::Numeric(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
