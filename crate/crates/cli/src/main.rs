//! `lazypi` command-line driver.
//!
//! Exit codes: 0 on success, 1 for invalid input (bad flags, manifests or
//! data files), 2 for failures while running.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use overrides::ConfigOverrides;

#[derive(Debug, Parser)]
#[command(name = "lazypi", version, about = "Prediction intervals for neural-network regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Print extra detail (resolved configs, per-trial rows).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic regression dataset as CSV.
    Simulate(SimulateArgs),
    /// Run a method comparison described by a manifest.
    Compare(CompareArgs),
    /// Fit one method on a training CSV and write intervals for a test CSV.
    Intervals(IntervalsArgs),
    /// Estimate out-of-sample stability of the private lazy refit.
    Stability(StabilityArgs),
    /// Report the privacy spent by DP-SGD and the resulting coverage slack.
    Accountant(AccountantArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of rows.
    #[arg(long = "n", default_value_t = 5000)]
    n_samples: usize,
    /// Feature dimension.
    #[arg(long = "p", default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature variance.
    #[arg(long, default_value_t = 5.0)]
    x_scale: f64,
    /// Response noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    /// Output file; defaults to `simulated.csv` in the output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Manifest file (TOML). Without one, the default simulation setup is used.
    manifest: Option<PathBuf>,
    /// Feature dimension of the default simulation (ignored with a manifest).
    #[arg(long = "p")]
    dim: Option<usize>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Print the resolved manifest and exit without running or writing.
    #[arg(long)]
    dry_run: bool,
    /// Where results go; defaults to `results/<manifest name>`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IntervalsArgs {
    /// Training data (CSV with header).
    #[arg(long)]
    train: PathBuf,
    /// Points to predict at; must hold the training feature columns.
    #[arg(long)]
    test: PathBuf,
    /// Response column name.
    #[arg(long)]
    response: String,
    /// Response transform: identity or log1p.
    #[arg(long, default_value = "identity")]
    transform: String,
    #[arg(long, default_value = "dp_lazy")]
    method: String,
    /// Manifest supplying model and interval settings.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StabilityArgs {
    /// Manifest naming the data and settings; defaults to the simulation setup.
    manifest: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Monte-Carlo repetitions (each retrains twice).
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Test points checked per repetition.
    #[arg(long, default_value_t = 50)]
    test_points: usize,
}

#[derive(Debug, Args)]
struct AccountantArgs {
    /// Noise multiplier.
    #[arg(long)]
    sigma: Option<f64>,
    /// Sampling rate (expected lot size over n).
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    /// Number of DP-SGD iterations.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Stability level for the slack term.
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Budget to report the slack for; with no --sigma, also calibrates one.
    #[arg(long)]
    epsilon: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Compare(args) => commands::compare(args, cli.verbose),
        Command::Intervals(args) => commands::intervals(args),
        Command::Stability(args) => commands::stability(args),
        Command::Accountant(args) => commands::accountant(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
