use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "sdgl",
    version,
    about = "Static and dynamic graph learning forecaster"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a CSV series and write a checkpoint.
    Train(TrainArgs),
    /// Report overall and per-horizon metrics of a checkpoint.
    Eval(EvalArgs),
    /// Forecast the next horizon from the latest window of a series.
    Predict(PredictArgs),
    /// Write the learned static graph and selected dynamic graphs as CSV.
    ExportGraphs(ExportArgs),
    /// Generate a planted-graph synthetic series.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Directory for every file the command writes.
    #[arg(long, default_value = "sdgl-out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML model config, or a JSON run manifest whose config is reused.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    /// May be repeated.
    #[arg(long, value_parser = ["no_gloss", "no_dyadj", "no_ifm", "ifm_plus"])]
    pub ablate: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Forecast from the window ending just before this row (default: end of data).
    #[arg(long)]
    pub at: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Window indices (over the whole series) whose dynamic graphs are written.
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,
    /// Edge-list threshold on the static graph; defaults to 1/N.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub nodes: usize,
    #[arg(long, default_value_t = 512)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub edge_prob: f64,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = 24.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Start a switch interval every this many steps (0 disables switching).
    #[arg(long, default_value_t = 0)]
    pub switch_every: usize,
    #[arg(long, default_value_t = 100)]
    pub switch_duration: usize,
    #[arg(long, default_value_t = 0.5)]
    pub switch_fraction: f64,
    #[command(flatten)]
    pub common: Common,
}
