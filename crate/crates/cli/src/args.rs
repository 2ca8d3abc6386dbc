use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use upanets::arch::ExcMode;

#[derive(Debug, Parser)]
#[command(
    name = "upanets",
    version,
    about = "Train, evaluate and inspect UPANets image classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and keep the best checkpoint.
    Train(TrainArgs),
    /// Report test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Sample the loss and error surface around a checkpoint.
    Landscape(LandscapeArgs),
    /// Print per-module parameter counts and the efficiency score.
    Params(ParamsArgs),
    /// Dump feature maps of one block as grayscale images.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Architecture preset: upa16, upa32, upa64, or upaN for base width N.
    #[arg(long, default_value = "upa16")]
    pub model: String,
    /// Blocks per layer are 4 × depth.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// How layer outputs reach the classifier.
    #[arg(long, default_value = "exc_spa_and_gap", value_parser = parse_exc_mode)]
    pub exc_mode: ExcMode,
    /// Drop the channel pixel attention path from every block.
    #[arg(long)]
    pub no_cpa: bool,
    /// Convolution groups in layers 1-4.
    #[arg(long, default_value_t = 1)]
    pub groups: usize,
    /// Channel shuffle after grouped convolutions.
    #[arg(long)]
    pub shuffle: bool,
    /// Omit the scalar bias of spatial pixel attention.
    #[arg(long)]
    pub no_spa_bias: bool,
}

fn parse_exc_mode(s: &str) -> Result<ExcMode, String> {
    s.parse().map_err(|e: upanets::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory with the CIFAR binary batches.
    #[arg(long, env = "UPANETS_CIFAR_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Use generated colour blobs instead of CIFAR.
    #[arg(long)]
    pub synthetic: bool,
    /// Keep only the first N training images.
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Keep only the first N test images.
    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// Train on normalized images without crop or flip.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    /// Seed of the synthetic dataset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Range 0.0375 with 50 steps per axis.
    PaperComparison,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Half-width r of the sampled square [-r, r]².
    #[arg(long, conflicts_with = "preset")]
    pub range: Option<f64>,
    /// Samples per axis.
    #[arg(long, conflicts_with = "preset")]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Pick the largest range whose coarse probe stays finite.
    #[arg(long, conflicts_with_all = ["preset", "range"])]
    pub search_range: bool,
    /// Test images evaluated per cell.
    #[arg(long, default_value_t = 1000, conflicts_with = "full_set")]
    pub subset: usize,
    /// Evaluate every test image per cell.
    #[arg(long)]
    pub full_set: bool,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    /// Seed of the random directions and of the synthetic dataset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/landscape")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Accuracy in percent for the efficiency score.
    #[arg(long)]
    pub accuracy: Option<f64>,
    /// Parameter count in millions to use instead of the built model's.
    #[arg(long)]
    pub size: Option<f64>,
    #[arg(long, default_value = "runs/params")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    /// A test image.
    Image,
    /// Standard normal noise.
    Noise,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Block whose conv path, CPA path and their sum are dumped.
    #[arg(long, default_value = "layer2.block0")]
    pub tap: String,
    #[arg(long, value_enum, default_value = "image")]
    pub source: Source,
    /// Channels written per group.
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Test image used with `--source image`.
    #[arg(long, default_value_t = 0)]
    pub image_index: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/inspect")]
    pub out: PathBuf,
}
