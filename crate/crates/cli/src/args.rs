use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "speechbreath", version, about = "Respiration trace and breathing rate estimation from speech")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with belt ground truth.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Rank embedding dimensions and write selection files.
    Saliency(SaliencyArgs),
    /// Estimate the respiration trace and rate of one recording.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with defaults; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_utterances: Option<usize>,
    #[arg(long)]
    pub utterance_s: Option<f64>,
    #[arg(long)]
    pub utterances_per_speaker: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `mfb`, `emb:<layer|pattern>` or `fused:<layer|pattern>`.
    #[arg(long)]
    pub features: Option<String>,
    /// Selection file written by `saliency`.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long)]
    pub segment_s: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub speed_factors: Option<Vec<f64>>,
    #[arg(long)]
    pub lstm_layers: Option<usize>,
    #[arg(long)]
    pub lstm_units: Option<usize>,
    #[arg(long)]
    pub embed_units: Option<usize>,
    #[arg(long)]
    pub conv_width: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write one trace CSV per segment under `traces/`.
    #[arg(long)]
    pub traces: bool,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Layer number or `{stem}` pattern of the embedding files.
    #[arg(long)]
    pub emb: String,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.75,0.5,0.25")]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    /// Embedding file; defaults to the pattern stored with the checkpoint.
    #[arg(long)]
    pub emb: Option<PathBuf>,
}
