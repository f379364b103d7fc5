//! `manigrad`: batch driver for data generation, training, geodesics,
//! attribution, attacks and evaluation. Every run writes a `run.json`
//! provenance record; errors are one JSON line on stderr.

mod commands;
mod evaluate;
mod failure;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use failure::{usage, CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "manigrad", version, about = "Manifold-aware path attribution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural dataset with baseline images appended.
    GenData(GenDataArgs),
    /// Export one dataset image (optionally its reconstruction) as NTF.
    Sample(SampleArgs),
    /// Train a VAE on a dataset directory.
    TrainVae(TrainVaeArgs),
    /// Train a classifier on VAE reconstructions.
    TrainClassifier(TrainClassifierArgs),
    /// Latent geodesic between two encoded images.
    Geodesic(GeodesicArgs),
    /// Attribution map of one input.
    Attribute(AttributeArgs),
    /// Attributional attack on one input.
    Attack(AttackArgs),
    /// Metric table over a set of inputs described by a config file.
    Evaluate(EvaluateArgs),
    /// Means, standard errors and orderings of a results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GenDataArgs {
    #[arg(long, default_value = "shapes")]
    pub dataset: String,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of black and of white images appended.
    #[arg(long, default_value_t = 0.05)]
    pub baseline_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub index: usize,
    /// Write the reconstruction under this VAE instead of the raw image.
    #[arg(long)]
    pub vae: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainVaeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub latent: usize,
    #[arg(long, value_delimiter = ',', default_value = "256")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub kl_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    pub feature_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "256,128")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GeodesicArgs {
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub to: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    /// Coarsest level of the multilevel solve.
    #[arg(long, default_value_t = 4)]
    pub coarsest: usize,
    /// exact | encoder-approx
    #[arg(long, default_value = "exact")]
    pub mode: String,
    #[arg(long, default_value_t = 300)]
    pub max_iterations: usize,
    #[arg(long)]
    pub energy_tolerance: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttributeArgs {
    /// ig | mig | eig | blurig | smoothig | saliency | ixg | gbp
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub clf: PathBuf,
    #[arg(long)]
    pub vae: Option<PathBuf>,
    /// Precomputed latent curve for MIG.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    /// black | white | FILE
    #[arg(long, default_value = "black")]
    pub baseline: String,
    #[arg(long, default_value_t = 32)]
    pub steps: usize,
    /// left | midpoint
    #[arg(long, default_value = "left")]
    pub rule: String,
    /// Explained class; defaults to the prediction.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub geodesic_steps: usize,
    #[arg(long, default_value_t = 8.0)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub smooth_sigma: f64,
    #[arg(long, default_value_t = 16)]
    pub smooth_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Append the completeness residual to this results CSV.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttackArgs {
    /// targeted | topk
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub clf: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Class-preservation weights; several values run a sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub gamma: Vec<f64>,
    #[arg(long, default_value = "black")]
    pub baseline: String,
    #[arg(long, default_value_t = 16)]
    pub ig_steps: usize,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluateArgs {
    /// infd | sensmax | ssi
    #[arg(long)]
    pub metric: String,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("MANIGRAD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("MANIGRAD_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(e.to_string()))
}

fn run(command: Command) -> CliResult<()> {
    configure_threads()?;
    match command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::TrainVae(a) => commands::train_vae(&a),
        Command::TrainClassifier(a) => commands::train_classifier(&a),
        Command::Geodesic(a) => commands::geodesic(&a),
        Command::Attribute(a) => commands::attribute(&a),
        Command::Attack(a) => commands::attack(&a),
        Command::Evaluate(a) => evaluate::evaluate(&a),
        Command::Report(a) => evaluate::report(&a),
    }
}

fn fail(failure: Failure) -> ExitCode {
    eprintln!("{}", failure.to_json_line());
    ExitCode::from(failure.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return fail(usage(first));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => fail(failure),
    }
}
