//! `horizon-law` command-line front end.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use config::RunConfig;
use failure::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Parser, Debug)]
#[command(name = "horizon-law", version, about = "Optimal look-back horizon toolkit")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "HORIZON_LAW_THREADS")]
    pub threads: Option<usize>,
    /// Output file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bayesian, approximation and total loss at one operating point.
    PredictLoss(PredictArgs),
    /// Optimal intrinsic dimension and horizon.
    OptimalHorizon(OptimalArgs),
    /// PCA spectrum and Zip-f fit of a CSV time series.
    Spectrum(SpectrumArgs),
    /// Scaling-curve fits ranked by AIC.
    FitCurve(FitArgs),
    /// Monte Carlo experiment.
    Simulate(SimulateArgs),
    /// Synthetic dataset from the intrinsic-space model.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Default)]
pub struct PointArgs {
    /// Partition cells (model size).
    #[arg(long = "n-regions", short = 'N')]
    pub n_regions: Option<f64>,
    /// Training samples.
    #[arg(long = "d-samples", short = 'D')]
    pub d_samples: Option<f64>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long)]
    pub xi_threshold: Option<f64>,
    /// Drop the spectral tail from the noise amplification term.
    #[arg(long)]
    pub noise_only: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Auto,
    Dense,
    Scarce,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Visible intrinsic dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Horizon in frames.
    #[arg(long = "horizon", short = 'H')]
    pub horizon: Option<usize>,
    /// `d=A..B` or `H=A..B`, inclusive; writes one row per value.
    #[arg(long)]
    pub sweep: Option<String>,
    #[command(flatten)]
    pub point: PointArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    SmallModel,
    LargeModel,
    Scarce,
    Numeric,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ScarceFormArg {
    Quadratic,
    LeadingOrder,
}

#[derive(Args, Debug)]
pub struct OptimalArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "quadratic")]
    pub scarce_form: ScarceFormArg,
    #[command(flatten)]
    pub point: PointArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Independent,
    Dependent,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    pub input: PathBuf,
    /// Window length L.
    #[arg(long, short = 'L')]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Inclusive 1-based eigenvalue range, `lo,hi`.
    #[arg(long)]
    pub fit_range: Option<String>,
    #[arg(long, value_enum, default_value = "independent")]
    pub channels: ChannelArg,
    /// Fill missing cells by linear interpolation instead of failing.
    #[arg(long)]
    pub interpolate: bool,
    /// Also write the eigenvalues as CSV.
    #[arg(long)]
    pub eigenvalues: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// CSV with columns x,y.
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 4.0)]
    pub alpha_max: f64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// nn, quantizer, pwl, downsample or ols.
    pub experiment: String,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated sweep values.
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of samples.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub d_visible: Option<usize>,
    /// Horizon in frames; overrides --d-visible through the mapping.
    #[arg(long = "horizon", short = 'H')]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    #[arg(long)]
    pub d_out: Option<usize>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::validation(format!("cannot start {n} threads: {e}")))?;
    }
    let ctx = commands::Context::new(&cli, cfg);
    match &cli.command {
        Command::PredictLoss(a) => commands::predict_loss(&ctx, a),
        Command::OptimalHorizon(a) => commands::optimal_horizon(&ctx, a),
        Command::Spectrum(a) => commands::spectrum(&ctx, a),
        Command::FitCurve(a) => commands::fit_curve(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Generate(a) => commands::generate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
