mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fnotl::train::Precision;

#[derive(Parser, Debug)]
#[command(name = "fnotl", version, about = "PDE datasets, Fourier neural operators and transfer-learning sweeps")]
pub struct Cli {
    /// Master seed for data generation, initialization and subsampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Grid points per axis (defaults to 64, or 128 with --paper-scale).
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Root directory for every artifact.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Use the full experiment sizes instead of the desk-scale defaults.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Network precision in bits.
    #[arg(long, global = true, default_value = "32", value_parser = parse_precision)]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: fnotl::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate datasets from named presets or a manifest file.
    Gen(GenArgs),
    /// Train a model from scratch on one or more datasets.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint on a downstream dataset.
    Finetune(FinetuneArgs),
    /// Mean relative L2 error of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Data- or model-scaling sweep on one downstream dataset.
    Sweep(SweepArgs),
    /// Pre-train on several systems at once and sweep each downstream task.
    Mixed(MixedArgs),
    /// From-scratch data needed to match each fine-tuned point.
    Equiv(EquivArgs),
    /// Repeat a sweep over seeds and aggregate quartiles.
    Seeds(SeedsArgs),
    /// Tables, figures and field images from a curve CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Preset names such as "SYS-1(1,5)"; repeatable.
    #[arg(long = "preset")]
    pub presets: Vec<String>,
    /// Manifest JSON to generate instead of presets.
    #[arg(long, conflicts_with = "presets")]
    pub manifest: Option<PathBuf>,
    /// Generate every preset.
    #[arg(long, conflicts_with_all = ["presets", "manifest"])]
    pub all: bool,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Epochs (defaults to the scale's value).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Grid-search learning rate and batch size instead of using --lr/--batch.
    #[arg(long)]
    pub tune: bool,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Dataset directories; several are concatenated into one mixed corpus.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Model as DxM, e.g. 16x8.
    #[arg(long, default_value = "16x8")]
    pub model: String,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint directory name under <out>/checkpoints.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of downstream examples (default: the whole training split).
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug, Clone)]
pub struct CurveArgs {
    /// Downstream example counts, comma separated (default: the scale's sizes).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Curve modes: FROM_SCRATCH, FINE_TUNE, ZERO_SHOT.
    #[arg(long, value_delimiter = ',', default_value = "FROM_SCRATCH,FINE_TUNE,ZERO_SHOT")]
    pub modes: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip per-cell tuning and train every cell at this learning rate.
    #[arg(long)]
    pub fixed_lr: Option<f64>,
    /// Batch size used with --fixed-lr.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pre-trained checkpoints, one per model; repeatable.
    #[arg(long = "ckpt")]
    pub ckpts: Vec<PathBuf>,
    /// Models as DxM; repeatable. Ignored when --ladder is given.
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Model-scaling ladder: desk or paper.
    #[arg(long)]
    pub ladder: Option<String>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct MixedArgs {
    /// Pre-training dataset directories, one per system.
    #[arg(long = "pretrain", required = true)]
    pub pretrain: Vec<PathBuf>,
    /// Downstream dataset directories.
    #[arg(long = "downstream", required = true)]
    pub downstream: Vec<PathBuf>,
    #[arg(long, default_value = "16x8")]
    pub model: String,
    /// Learning rate and batch size of the pre-training run.
    #[arg(long, default_value_t = 1e-3)]
    pub pretrain_lr: f64,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub curve: CurveArgs,
}

#[derive(Args, Debug)]
pub struct EquivArgs {
    #[arg(long)]
    pub curves: PathBuf,
    /// Restrict to one system label.
    #[arg(long)]
    pub system: Option<String>,
}

#[derive(Args, Debug)]
pub struct SeedsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: usize,
    #[command(flatten)]
    pub curve: CurveArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub curves: PathBuf,
    /// Datasets whose first test example is rendered as source/solution images.
    #[arg(long = "data")]
    pub data: Vec<PathBuf>,
    /// Output directory (default: <out>/report).
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
