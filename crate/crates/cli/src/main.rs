use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Hybrid video codec: conventional lossy stream, lossless reference
/// frames and a learned restoration network on the decoder side.
#[derive(Parser, Debug)]
#[command(name = "hybridvc", version)]
struct Cli {
    /// TOML file with defaults for any flag (flags still win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress a video into a .hvc container.
    Encode(EncodeArgs),
    /// Decode a .hvc container, optionally restoring it.
    Decode(DecodeArgs),
    /// Train the restoration network.
    Train(TrainArgs),
    /// Sweep quality settings and report RD curves and BD-rate.
    Eval(EvalArgs),
    /// Print detected scene cuts.
    Detect(DetectArgs),
}

/// Input video location and, for raw .yuv, its shape.
#[derive(Args, Debug, Clone)]
pub struct VideoInput {
    /// .y4m or .yuv file.
    pub input: PathBuf,
    /// Frame size for .yuv input, as WxH.
    #[arg(long)]
    pub size: Option<String>,
    /// Frame rate for .yuv input.
    #[arg(long)]
    pub fps: Option<f32>,
}

/// Codec selection shared by encode and eval.
#[derive(Args, Debug, Clone, Default)]
pub struct CodecArgs {
    /// mock, hevc, vvc or external.
    #[arg(long)]
    pub codec: Option<String>,
    /// Mock codec quality, 1..=100.
    #[arg(long)]
    pub quality: Option<u32>,
    /// QP for external codecs.
    #[arg(long)]
    pub qp: Option<u32>,
    /// Encoder preset for external codecs.
    #[arg(long)]
    pub preset: Option<String>,
    /// Encoder command template for --codec external.
    #[arg(long)]
    pub encode_cmd: Option<String>,
    /// Decoder command template for --codec external.
    #[arg(long)]
    pub decode_cmd: Option<String>,
    /// Reference codec: mock or jxl.
    #[arg(long)]
    pub ref_codec: Option<String>,
    /// first or scene-cut.
    #[arg(long)]
    pub ref_policy: Option<String>,
    #[arg(long)]
    pub scene_threshold: Option<f64>,
    #[arg(long)]
    pub min_scene_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub video: VideoInput,
    #[command(flatten)]
    pub codec: CodecArgs,
    /// Output container (.hvc).
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Input container (.hvc).
    pub input: PathBuf,
    /// Output video (.y4m or .yuv).
    #[arg(short, long)]
    pub output: PathBuf,
    /// raw, step1 or step2.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Network preset the checkpoint must match (desk or full).
    #[arg(long)]
    pub network: Option<String>,
    /// Ground-truth video; enables the per-frame PSNR log.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Where to write the per-frame PSNR CSV.
    #[arg(long)]
    pub psnr_log: Option<PathBuf>,
    /// Threads for frame restoration (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Decoder command template for external video.
    #[arg(long)]
    pub decode_cmd: Option<String>,
    /// Decoder command template for external references.
    #[arg(long)]
    pub ref_decode_cmd: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Network and schedule preset: desk or full.
    #[arg(long)]
    pub preset: Option<String>,
    /// step1, step2, both or end-to-end.
    #[arg(long)]
    pub stage: Option<String>,
    /// Checkpoint to start from (required for --stage step2).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output checkpoint (.ckpt).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Training videos (.y4m), cut into 7-frame clips. Synthetic clips
    /// are generated when omitted.
    #[arg(long, value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Number of synthetic training clips.
    #[arg(long)]
    pub clips: Option<usize>,
    /// Side of synthetic clips in pixels.
    #[arg(long)]
    pub clip_size: Option<usize>,
    /// Mock codec quality used to make training pairs.
    #[arg(long)]
    pub quality: Option<u32>,
    #[arg(long)]
    pub iterations_step1: Option<usize>,
    #[arg(long)]
    pub iterations_step2: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training log CSV (iteration, loss, val_psnr).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub video: VideoInput,
    #[command(flatten)]
    pub codec: CodecArgs,
    /// Quality (mock) or QP (external) points.
    #[arg(long, value_delimiter = ',')]
    pub points: Vec<u32>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Decode modes to evaluate (default raw, plus step1,step2 with a checkpoint).
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<String>,
    /// Label of the BD-rate anchor curve.
    #[arg(long)]
    pub anchor: Option<String>,
    #[arg(long)]
    pub csv: PathBuf,
    /// JSON summary path (also printed to stdout).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub video: VideoInput,
    #[arg(long)]
    pub scene_threshold: Option<f64>,
    #[arg(long)]
    pub min_scene_len: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(commands::EXIT_VALIDATION),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
