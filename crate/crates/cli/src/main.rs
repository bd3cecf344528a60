//! `quadpose` command-line driver.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quadpose::align::MatchPolicy;

/// Error raised for bad input (arguments, config, files). Exits with 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "quadpose", version, about = "Quadruped 3D pose estimation from depth images")]
pub struct Cli {
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic annotated depth dataset.
    Synth(SynthArgs),
    /// Train the hierarchical pose prior on a pose sequence.
    TrainPrior(TrainPriorArgs),
    /// Build the PCA shape model, optionally predicting a shape from bone lengths.
    FitShape(FitShapeArgs),
    /// Produce per-frame joint predictions with the ground-truth oracle.
    Predict(PredictArgs),
    /// Fit the prior to stored predictions and align to the point clouds.
    Refine(RefineArgs),
    /// Score fitted or predicted joints against the annotations.
    Eval(EvalArgs),
    /// Predict, fit, align and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GaitArg {
    Walk,
    Trot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Once,
    Repeat,
    MutualOnce,
    MutualRepeat,
}

impl From<PolicyArg> for MatchPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Once => MatchPolicy::Once,
            PolicyArg::Repeat => MatchPolicy::Repeat,
            PolicyArg::MutualOnce => MatchPolicy::MutualOnce,
            PolicyArg::MutualRepeat => MatchPolicy::MutualRepeat,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long, value_enum)]
    pub gait: Option<GaitArg>,
    /// Camera ring radius, mm.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Camera height above the target, mm.
    #[arg(long)]
    pub height: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub noise_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Append left-right mirrored copies of every sample.
    #[arg(long)]
    pub mirror: bool,
    /// Let the root travel and turn instead of pinning it at the origin.
    #[arg(long)]
    pub free_root: bool,
    /// Render surrogate dog number N of the shape corpus instead of the template.
    #[arg(long)]
    pub surrogate: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainPriorArgs {
    /// Pose sequence, JSON lines.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame deduplication threshold; 0 keeps every frame.
    #[arg(long)]
    pub dedup: Option<f64>,
    /// Latent dimensions of root, legs and leaf nodes, e.g. `3,3,2`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitShapeArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of surrogate dogs in the corpus.
    #[arg(long)]
    pub corpus: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave dog N out of the model.
    #[arg(long)]
    pub hold_out: Option<usize>,
    /// JSON array of target bone lengths (mm) to predict a shape from.
    #[arg(long)]
    pub lengths: Option<PathBuf>,
    #[arg(long)]
    pub components: Option<usize>,
    /// Directory for the predicted skeleton and mesh.
    #[arg(long)]
    pub predict_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    /// Oracle noise on x and y, network pixels.
    #[arg(long)]
    pub sigma_px: Option<f64>,
    /// Oracle noise on the depth code.
    #[arg(long)]
    pub sigma_code: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Blank a square of this many network pixels in each frame.
    #[arg(long)]
    pub occlude: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Trained prior archive.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Weight of the 2D reprojection term.
    #[arg(long)]
    pub lambda2d: Option<f64>,
    #[arg(long, value_enum)]
    pub match_policy: Option<PolicyArg>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions, JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub camera: Option<usize>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Also write each prediction as a heatmap stack into this directory.
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output directory for fits and report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub camera: Option<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fits (from `refine` or `pipeline`) or predictions (from `predict`), JSON lines.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub camera: Option<usize>,
    /// Report JSON; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub camera: Option<usize>,
    /// Use the dataset's skeleton and mesh instead of predicting the shape.
    #[arg(long)]
    pub known_shape: bool,
    /// Shape model archive (unknown-shape runs only).
    #[arg(long)]
    pub shape_model: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
    /// Skip the per-frame overlay images.
    #[arg(long)]
    pub no_overlays: bool,
}

fn init_logging(level: &str) {
    let level = level.parse().unwrap_or(log::LevelFilter::Info);
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_lowercase(),
                record.target(),
                record.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<Invalid>().is_some() { 2 } else { 3 };
            let msg = format!("{e:#}").replace('"', "'");
            log::error!("event=failed exit_code={code} error=\"{msg}\"");
            ExitCode::from(code)
        }
    }
}
