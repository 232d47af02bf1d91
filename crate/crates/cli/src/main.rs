//! `margscore` — score matching from partially missing data.
//!
//! Subcommands cover the full experiment loop: `gen` draws synthetic data
//! with known ground truth, `corrupt` applies a missingness mechanism,
//! `fit` estimates model parameters from masked data, `ggm` runs an
//! L1-regularized precision path and scores edge recovery, and `repro`
//! re-runs the bundled desk-scale experiment suites.
//!
//! Every command takes an optional `--config FILE` (TOML, sections mirroring
//! the library configs, unknown keys rejected); flags override file values.
//! Each run writes a `manifest.json` with the resolved config, its hash, the
//! seed, and tool versions. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure.

mod commands;
mod config;
mod errors;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(
    name = "margscore",
    version,
    about = "Score matching from partially missing multivariate data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Gen(GenArgs),
    /// Apply a missingness mechanism to a fully observed CSV.
    Corrupt(CorruptArgs),
    /// Fit a score model to a possibly masked CSV.
    Fit(FitArgs),
    /// Run an L1-regularized precision path and score edge recovery.
    Ggm(GgmArgs),
    /// Re-run a bundled desk-scale experiment suite.
    Repro(ReproArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Model family: random-gaussian | star | dense | ica.
    pub family: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Hub count for the star family.
    #[arg(long)]
    pub centers: Option<usize>,
    /// Edge probability for the dense family.
    #[arg(long = "edge-prob")]
    pub edge_prob: Option<f64>,
    /// TOML file describing a truncation region to sample under.
    #[arg(long)]
    pub truncation: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default ".").
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fully observed input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Miss each cell independently with this probability (MCAR).
    #[arg(long)]
    pub p: Option<f64>,
    /// "alpha,beta" of the logistic self-masking propensity (MNAR).
    #[arg(long = "mnar-propensity")]
    pub mnar_propensity: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV; empty cells mark missing entries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Estimator: iw | var | zeroed.
    #[arg(long)]
    pub method: Option<String>,
    /// Score model: gaussian | ica.
    #[arg(long)]
    pub model: Option<String>,
    /// Imputation draws per sample.
    #[arg(long)]
    pub r: Option<usize>,
    /// Coordinatewise variance of the Gaussian imputation proposal (iw).
    #[arg(long = "proposal-var")]
    pub proposal_var: Option<f64>,
    /// Learning rate for the model parameters.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning rate for the variational parameters (var).
    #[arg(long = "lr-phi")]
    pub lr_phi: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Outer iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Variational updates per outer iteration (var).
    #[arg(long = "inner-steps")]
    pub inner_steps: Option<usize>,
    /// Hidden width of the variational mean network (var).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Variational loss: kl | fisher.
    #[arg(long)]
    pub loss: Option<String>,
    /// Slicing direction family: rademacher | basis (var).
    #[arg(long)]
    pub sliced: Option<String>,
    /// Comma-separated noise scales for the denoising variant (var).
    #[arg(long = "denoise-levels")]
    pub denoise_levels: Option<String>,
    /// "alpha,beta" of the logistic self-masking propensity (iw).
    #[arg(long = "mnar-propensity")]
    pub mnar_propensity: Option<String>,
    /// TOML file describing the truncation region the data lives on.
    #[arg(long)]
    pub truncation: Option<PathBuf>,
    /// Standardize columns from observed entries before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Double the derivative term of the zero-fill objective (default true).
    #[arg(long = "factor-two")]
    pub factor_two: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GgmArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV; empty cells mark missing entries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Reference adjacency CSV (0/1 grid) to score the path against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Fully observed CSV for building reference adjacencies when no truth
    /// adjacency is available.
    #[arg(long = "full-data")]
    pub full_data: Option<PathBuf>,
    /// Path estimator: iw | var | zeroed.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long = "lambda1-max")]
    pub lambda1_max: Option<f64>,
    #[arg(long = "lambda1-min")]
    pub lambda1_min: Option<f64>,
    #[arg(long = "lambda1-count")]
    pub lambda1_count: Option<usize>,
    /// Absolute precision magnitude above which a pair counts as an edge.
    #[arg(long = "edge-threshold")]
    pub edge_threshold: Option<f64>,
    /// Pick the edge threshold automatically from path smoothness.
    #[arg(long = "auto-threshold")]
    pub auto_threshold: bool,
    /// Standardize columns from observed entries before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long = "proposal-var")]
    pub proposal_var: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long = "inner-steps")]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "lr-phi")]
    pub lr_phi: Option<f64>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long = "warmup-iters")]
    pub warmup_iters: Option<usize>,
    #[arg(long = "iters-per-level")]
    pub iters_per_level: Option<usize>,
    /// TOML file describing the truncation region the data lives on.
    #[arg(long)]
    pub truncation: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReproArgs {
    /// Suite name: gaussian-desk | ica-desk | star-desk.
    pub name: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(args) => commands::gen::run(args),
        Command::Corrupt(args) => commands::corrupt::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Ggm(args) => commands::ggm::run(args),
        Command::Repro(args) => commands::repro::run(args),
    }
}
