use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ulasan", version, about = "Sentiment and emotion classification for Indonesian product reviews")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label distribution and frequent n-grams of a dataset
    Stats(StatsArgs),
    /// Clean every review and write the token lists as JSON lines
    Prep(PrepArgs),
    /// Train a linear leaderboard or a neural model
    Train(TrainArgs),
    /// Score a saved model on labelled data
    Evaluate(EvaluateArgs),
    /// Side-by-side test metrics of finished runs
    Compare(CompareArgs),
    /// Predict labels for text, one JSON line per input
    Predict(PredictArgs),
    /// Serve predictions over HTTP
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Semicolon-delimited review CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Rows per n-gram table
    #[arg(long, default_value_t = 20)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output file (standard output when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Slang lexicon replacing the shipped seed table
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Track {
    Linear,
    Neural,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub track: Track,
    /// Neural: baseline, improved, large or textcnn. Linear: logreg,
    /// linsvm, nb or all (default).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root under which the run directory is created
    #[arg(long, default_value = "outputs")]
    pub out: PathBuf,
    /// JSON file overlaying the built-in defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Cross-validation folds for the linear leaderboard
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    /// The held-out test portion of the seeded split
    Test,
    /// Every row of the file
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model container or run directory
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Seed of the split (must match the training run)
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Print the reports as JSON instead of tables
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories containing metrics.json
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["text", "input"]))]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: Option<String>,
    /// File with one review per line
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
}
