use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use micam::eval::InsertionOrder;
use micam::Method;

#[derive(Debug, Parser)]
#[command(name = "micam", version, about = "Gradient-free CNN saliency maps weighted by mutual information")]
pub struct Cli {
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for per-image and per-channel work.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an overlay PNG, the raw saliency matrix and the channel weights for one image.
    Explain(ExplainArgs),
    /// Score saliency maps with AD/AI, deletion/insertion AUC and pointing-game metrics.
    Evaluate(EvaluateArgs),
    /// Compare channel weights on an image and a perturbed copy of it.
    Counterfactual(CounterfactualArgs),
    /// Rank-correlate maps from progressively randomized models with the original map.
    Sanity(SanityArgs),
    /// Time each method on each model.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model JSON path, a name under $MICAM_MODEL_DIR, or `builtin:toy`.
    #[arg(long)]
    pub model: Option<String>,

    /// Layer to explain. Defaults to the last conv layer.
    #[arg(long)]
    pub layer: Option<String>,

    /// Histogram bins for the MI estimator.
    #[arg(long)]
    pub bins: Option<usize>,

    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub image: Option<PathBuf>,

    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,

    /// Target class for Score-CAM. Defaults to the top prediction.
    #[arg(long)]
    pub class: Option<usize>,

    /// Heatmap opacity in the overlay.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Image files or directories of PNG/JPEG files.
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,

    /// JSON list of `{image, class, x, y, w, h}` boxes.
    #[arg(long)]
    pub annotations: Option<PathBuf>,

    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,

    /// Saliency threshold for the AD/AI masks.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Fraction of pixels changed per curve step.
    #[arg(long)]
    pub step: Option<f64>,

    #[arg(long)]
    pub steps: Option<usize>,

    /// `least-important-first` or `most-important-first`.
    #[arg(long, value_parser = parse_order)]
    pub insertion_order: Option<InsertionOrder>,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub image: Option<PathBuf>,

    /// `occlude` (top salient pixels), `patch` (random equal-area rectangle) or `fill` (random pixels).
    #[arg(long)]
    pub policy: Option<String>,

    /// Fraction of pixels perturbed.
    #[arg(long)]
    pub fraction: Option<f64>,

    /// Replacement intensity.
    #[arg(long)]
    pub fill: Option<u8>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<Method>,
}

#[derive(Debug, Args)]
pub struct SanityArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub image: Option<PathBuf>,

    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,

    /// Cascade depths: the number of top parameterized layers randomized.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Models to time; repeatable.
    #[arg(long = "model")]
    pub models: Vec<String>,

    #[arg(long)]
    pub layer: Option<String>,

    #[arg(long)]
    pub bins: Option<usize>,

    #[arg(long, short)]
    pub out: Option<PathBuf>,

    /// Images to explain. Defaults to one synthetic scene per model.
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,

    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<Method>,

    #[arg(long)]
    pub repeats: Option<usize>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: micam::Error| e.to_string())
}

fn parse_order(s: &str) -> Result<InsertionOrder, String> {
    match s {
        "least-important-first" | "least" => Ok(InsertionOrder::LeastImportantFirst),
        "most-important-first" | "most" => Ok(InsertionOrder::MostImportantFirst),
        _ => Err(format!("unknown insertion order `{s}`")),
    }
}
