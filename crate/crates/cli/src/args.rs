use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "twotime", version, about = "Two-time-scale stochastic approximation: predict and validate asymptotic covariances")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions of a config.
    Validate(ConfigArgs),
    /// Solve for the asymptotic covariance blocks.
    Predict(PredictArgs),
    /// Propagate, simulate or test a config against its prediction.
    Run(RunArgs),
    /// Iterate averaging as a two-time-scale system.
    Averaging(AveragingArgs),
    /// Compare random slow gains with the optimal one and simulate the optimum.
    Gain(GainArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Write the prediction here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Propagate,
    Ensemble,
    Normality,
    TransformedCheck,
}

/// Simulation knobs shared by the sampling commands. Unset values fall back
/// to the config's `run` block, then to per-command defaults.
#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Run even if the assumptions fail (to observe divergence).
    #[arg(long)]
    pub skip_validate: bool,
}

#[derive(Debug, Args)]
pub struct AveragingArgs {
    /// Matrix `A`, rows separated by `;`, entries by `,` (e.g. "1,0.5;0,2").
    #[arg(long = "a", allow_hyphen_values = true)]
    pub a: String,
    /// Offset `b`, comma separated; defaults to zero.
    #[arg(long = "b", allow_hyphen_values = true)]
    pub b: Option<String>,
    /// Noise covariance; defaults to the identity.
    #[arg(long = "gamma", allow_hyphen_values = true)]
    pub gamma: Option<String>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct GainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Number of random stable gains compared with the optimum.
    #[arg(long, default_value_t = 20)]
    pub gains: usize,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub skip_validate: bool,
}
