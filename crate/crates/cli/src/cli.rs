use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pqi_core::augment::ArtifactKind;

#[derive(Debug, Parser)]
#[command(name = "pqi", version, about = "Perception quality index tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every image in a directory.
    Score(ScoreArgs),
    /// Track mean PQI while an artifact gets stronger.
    Sweep(SweepArgs),
    /// Mean, standard deviation and histogram of a scores CSV.
    Stats(StatsArgs),
    /// PLCC, SRCC and R² of predictions against targets.
    Eval(EvalArgs),
    /// Train SPA-Net on images labelled by a scores CSV.
    SpanetTrain(TrainArgs),
    /// Predict PQI with a trained SPA-Net checkpoint.
    SpanetPredict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value file with defaults for any long flag of the command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    /// Base surround radius in pixels.
    #[arg(long, default_value_t = 1)]
    pub sigma: usize,
    /// Comma-separated scale exponents.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    pub scales: Vec<u32>,
    /// Detections below this confidence are ignored.
    #[arg(long, default_value_t = pqi_core::detection::DEFAULT_CONFIDENCE_THRESHOLD)]
    pub conf_threshold: f64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of PNG or JPEG images.
    #[arg(long)]
    pub images: PathBuf,
    /// JSON Lines detections file.
    #[arg(long)]
    pub detections: PathBuf,
    #[command(flatten)]
    pub saliency: SaliencyArgs,
    /// Also write each saliency map as PNG preview and raw dump.
    #[arg(long)]
    pub save_maps: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of PNG or JPEG images.
    #[arg(long)]
    pub images: PathBuf,
    /// JSON Lines detections file.
    #[arg(long)]
    pub detections: PathBuf,
    #[command(flatten)]
    pub saliency: SaliencyArgs,
    /// Artifact: darkness, brightness, fog or speed.
    #[arg(long, value_parser = parse_kind)]
    pub kind: ArtifactKind,
    /// Comma-separated, strictly increasing levels in [0, 1].
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
    )]
    pub levels: Vec<f64>,
}

fn parse_kind(s: &str) -> Result<ArtifactKind, String> {
    s.parse().map_err(|e: pqi_core::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StdChoice {
    Population,
    Sample,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scores CSV with a `pqi` column.
    #[arg(long)]
    pub scores: PathBuf,
    /// Histogram bucket width in PQI units.
    #[arg(long, default_value_t = 1.0)]
    pub bucket_width: f64,
    /// Standard deviation estimator.
    #[arg(long, value_enum, default_value_t = StdChoice::Population)]
    pub std: StdChoice,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with `image_id` and `pqi_pred` (or `pqi`).
    #[arg(long)]
    pub predictions: PathBuf,
    /// CSV with `image_id` and `pqi` (or `target`).
    #[arg(long)]
    pub targets: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 512-px input, 32-px patches, 256-wide tokens, 500 superpixels.
    Full,
    /// 64-px input, 16-px patches, 32-wide tokens, 32 superpixels.
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of PNG or JPEG images.
    #[arg(long)]
    pub images: PathBuf,
    /// Scores CSV (`image_id,pqi,...`) giving the training targets.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Override the preset's superpixel count (0 drops the branch).
    #[arg(long)]
    pub superpixel_k: Option<usize>,
    /// Drop the superpixel size/position encoding.
    #[arg(long)]
    pub no_superpixel_encoding: bool,
    /// Training epochs.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Peak learning rate of the cosine schedule.
    #[arg(long, default_value_t = 2e-5)]
    pub lr_max: f64,
    /// Final learning rate of the cosine schedule.
    #[arg(long, default_value_t = 1e-6)]
    pub lr_min: f64,
    /// Images per Adam step.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Fraction of images held out for the validation loss.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    /// Seed for weight init, shuffling and the validation split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of PNG or JPEG images.
    #[arg(long)]
    pub images: PathBuf,
    /// Checkpoint written by `spanet-train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}
