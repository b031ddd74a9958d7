use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use locenc::encoders::EncoderKind;
use locenc::geobias::LowPerfRule;
use locenc::locbench::SynthKind;
use locenc::{Activation, Arch};
use serde::de::DeserializeOwned;

mod commands;
mod config;

use config::TaskName;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, schema or missing inputs; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running a valid request; exit code 1.
    #[error(transparent)]
    Runtime(#[from] locenc::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Location encoders, benchmark harness and geo-bias scores.
#[derive(Debug, Parser)]
#[command(name = "locenc", version)]
struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a location model on the train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Score the spatial bias of a predictions file.
    Geobias(GeobiasArgs),
    /// Getis-Ord Gi* hot spots of a predictions file.
    Hotspot(HotspotArgs),
}

fn parse_tag<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// sector_classes, cluster_classes, smooth_field or biased_clusters.
    #[arg(long)]
    pub kind: Option<SynthKind>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub cluster_radius_km: Option<f64>,
    /// Also write simulated image log-probabilities with this accuracy.
    #[arg(long)]
    pub image_accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// Position encoder, e.g. sphereC, grid, theory, rbf, tile.
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub cell_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_tag::<TaskName>)]
    pub task: Option<TaskName>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// ffn, residual4 or siren.
    #[arg(long, value_parser = parse_tag::<Arch>)]
    pub arch: Option<Arch>,
    #[arg(long, value_parser = parse_tag::<Activation>)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Image embedding CSV for fused regression.
    #[arg(long)]
    pub image_embeddings: Option<PathBuf>,
    /// Checkpoint path [default: <out>/model.tspm].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_tag::<TaskName>)]
    pub task: Option<TaskName>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image_logprobs: Option<PathBuf>,
    #[arg(long)]
    pub image_embeddings: Option<PathBuf>,
    /// When given, must match the checkpoint.
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Debug, Args)]
pub struct GeobiasArgs {
    /// Predictions CSV [default: <out>/predictions.csv].
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Inferred from the predictions when omitted.
    #[arg(long, value_parser = parse_tag::<TaskName>)]
    pub task: Option<TaskName>,
    #[arg(long)]
    pub radius_km: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_permutations: Option<usize>,
    #[arg(long)]
    pub max_centers: Option<usize>,
    #[arg(long)]
    pub background_spacing_km: Option<f64>,
    /// hit1_miss, abs_err_over_sigma(c) or abs_err_over_percentile(q).
    #[arg(long)]
    pub low_perf_rule: Option<LowPerfRule>,
}

#[derive(Debug, Args)]
pub struct HotspotArgs {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.paths.output_dir = Some(o);
    }
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Geobias(a) => commands::geobias(cfg, a),
        Command::Hotspot(a) => commands::hotspot(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
