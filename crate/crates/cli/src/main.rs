mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pwavec", version, about = "Learned lifting-wavelet image and video codec")]
pub struct Cli {
    /// key = value settings file; a [command] table applies to one command only
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Which weights to use. A weight file wins; otherwise an untrained model is
/// built from the remaining options.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Model weights or training checkpoint
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Context model: ar or four-step
    #[arg(long)]
    pub context: Option<String>,
    /// Lowpass context model: ar (default) or four-step
    #[arg(long)]
    pub ll_context: Option<String>,
    /// Network size for untrained models: reference, desk or compact
    #[arg(long)]
    pub preset: Option<String>,
    /// Base wavelet for untrained models: cdf53 or haar
    #[arg(long)]
    pub base: Option<String>,
    /// Integer lifting without quantization
    #[arg(long)]
    pub lossless: bool,
    /// Initialization seed for untrained models
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write an untrained model
    Init {
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train on luma patches cut from an image folder
    Train(TrainArgs),
    /// Compress one image
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Rate point id written to the header (0..4)
        #[arg(long)]
        lambda_id: Option<u8>,
        /// Also write the encoder's reconstruction
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Decompress one image
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Original image, for PSNR
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compress a Y4M file or a folder of frames
    EncodeVideo {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: VideoModelArgs,
        #[arg(long)]
        lambda_id: Option<u8>,
        /// Motion block size
        #[arg(long)]
        block: Option<usize>,
        /// Motion search range
        #[arg(long)]
        range: Option<i32>,
        /// Skip the temporal update step
        #[arg(long)]
        no_update: bool,
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Decompress a video to Y4M (".y4m" output) or a frame folder
    DecodeVideo {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: VideoModelArgs,
    },
    /// Time AR against four-step decoding
    Bench(BenchArgs),
    /// Write the 13 subband impulse responses as PGM images
    Impulse {
        image: PathBuf,
        /// Output folder
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct VideoModelArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Weights for the temporal lowpass frame (default: --model)
    #[arg(long)]
    pub model_low: Option<PathBuf>,
    /// Weights for the temporal highpass frames (default: --model)
    #[arg(long)]
    pub model_high: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Image folder
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output folder for checkpoints and logs
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_id: Option<u8>,
    /// Train every rate point: the largest λ first, the rest finetuned from it
    #[arg(long)]
    pub sweep: bool,
    /// Finetune from this checkpoint with a fresh optimizer
    #[arg(long)]
    pub finetune: Option<PathBuf>,
    /// Continue this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs per finetuned rate point in a sweep
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Random crops per image
    #[arg(long)]
    pub per_image: Option<usize>,
    /// Patches kept out of training for evaluation
    #[arg(long)]
    pub held_out: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for cropping and batch order
    #[arg(long)]
    pub train_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Image folder
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Use this many synthetic 768x512 images instead of a folder
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub ar_model: Option<PathBuf>,
    #[arg(long)]
    pub four_step_model: Option<PathBuf>,
    /// Also time the all-four-step configuration
    #[arg(long)]
    pub ablation: bool,
    /// Network size of untrained models
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// CSV report path
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PWAVEC_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("PWAVEC_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
