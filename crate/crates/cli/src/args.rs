use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpr_core::train::CropMode;

/// Full-page text recognition on synthetic documents.
///
/// Every option can also be set in a `key=value` file passed with
/// `--config`; keys are option names without the leading dashes. Options on
/// the command line win over the file.
#[derive(Debug, Parser)]
#[command(name = "fpr", version, args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory.
    GenCorpus(GenCorpus),
    /// Train the left-side line detector.
    TrainDetector(TrainDetector),
    /// Train the line recognizer.
    TrainRecognizer(TrainRecognizer),
    /// Detect and read every line of each page.
    RecognizePage(RecognizePage),
    /// Score hypotheses against ground truth.
    Evaluate(Evaluate),
}

#[derive(Debug, Args)]
pub struct ConfigFile {
    /// key=value file with option defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpus {
    #[command(flatten)]
    pub config: ConfigFile,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub pages: usize,
    /// Index of the first page; pages are numbered from here
    #[arg(long, default_value_t = 0)]
    pub first: u64,
    /// Probability of a two-column page
    #[arg(long, default_value_t = 0.5)]
    pub two_column_prob: f64,
    /// Standard deviation of Gaussian pixel noise
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 176)]
    pub min_width: usize,
    #[arg(long, default_value_t = 208)]
    pub max_width: usize,
    #[arg(long, default_value_t = 240)]
    pub min_height: usize,
    #[arg(long, default_value_t = 272)]
    pub max_height: usize,
    #[arg(long, default_value_t = 10)]
    pub min_line_height: usize,
    #[arg(long, default_value_t = 14)]
    pub max_line_height: usize,
    #[arg(long, default_value_t = 5)]
    pub min_lines: usize,
    #[arg(long, default_value_t = 8)]
    pub max_lines: usize,
    /// Maximum per-glyph vertical jitter in pixels
    #[arg(long, default_value_t = 1)]
    pub jitter: i32,
    /// Maximum slant in pixels
    #[arg(long, default_value_t = 1.0)]
    pub slant: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Arch {
    /// Small network for the synthetic corpus
    Miniature,
    /// Full-size five-convolution network
    TableOne,
}

#[derive(Debug, Args)]
pub struct Training {
    /// Training corpus directory
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus directory
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long)]
    pub out: PathBuf,
    /// Total number of epochs
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RMSProp learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Dropout rate after each convolution
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Also keep a numbered checkpoint every N epochs (0: never)
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue from a checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainDetector {
    #[command(flatten)]
    pub config: ConfigFile,
    #[command(flatten)]
    pub training: Training,
    #[arg(long, value_enum, default_value_t = Arch::Miniature)]
    pub arch: Arch,
    /// Localization weight when solving the assignment
    #[arg(long, default_value_t = 1000.0)]
    pub alpha_match: f64,
    /// Localization weight in the loss gradient
    #[arg(long, default_value_t = 100.0)]
    pub alpha_grad: f64,
    /// Confidence threshold for the validation metric
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Acceptance zone for the validation metric, as a fraction of page width
    #[arg(long, default_value_t = 0.03)]
    pub zone: f64,
    /// Candidates per output cell (default: architecture's own)
    #[arg(long)]
    pub anchors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainRecognizer {
    #[command(flatten)]
    pub config: ConfigFile,
    #[command(flatten)]
    pub training: Training,
    /// Line crops used for training and validation
    #[arg(long, value_parser = parse_crop_mode, default_value = "left-extended")]
    pub crop_mode: CropMode,
    /// Crop margin in pixels
    #[arg(long, default_value_t = 10.0)]
    pub margin: f64,
    /// Random shift of the crop's left side during training, in pixels
    #[arg(long, default_value_t = 0.0)]
    pub jitter_x: f64,
    /// Random shift of the crop's bottom during training, in pixels
    #[arg(long, default_value_t = 0.0)]
    pub jitter_y: f64,
    /// Random change of the crop's line height during training, in pixels
    #[arg(long, default_value_t = 0.0)]
    pub jitter_height: f64,
    /// Normalized line height in pixels
    #[arg(long, default_value_t = 32)]
    pub line_height: usize,
    /// Append an end-of-line label to every training transcript
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub eol: bool,
}

fn parse_crop_mode(s: &str) -> Result<CropMode, String> {
    s.parse().map_err(|e: fpr_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct RecognizePage {
    #[command(flatten)]
    pub config: ConfigFile,
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub recognizer: PathBuf,
    /// Corpus directory whose pages are read
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    pub corpus: Option<PathBuf>,
    /// A single PGM page
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Line records output (jsonl)
    #[arg(long)]
    pub out: PathBuf,
    /// Detection confidence threshold
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Crop margin in pixels
    #[arg(long, default_value_t = 10.0)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[command(flatten)]
    pub config: ConfigFile,
    /// Hypothesis records (jsonl)
    #[arg(long)]
    pub hyp: PathBuf,
    /// Ground truth: a corpus directory or a gt.jsonl file
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Acceptance zones, as fractions of page width
    #[arg(long, value_delimiter = ',', default_value = "0.003,0.01,0.03,0.1")]
    pub zones: Vec<f64>,
    /// Machine-readable summary output (JSON)
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
