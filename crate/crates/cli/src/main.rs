use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

/// Switching deep vector-autoregressive latent model: train, segment,
/// forecast, impute and generate multivariate motion sequences.
#[derive(Parser, Debug)]
#[command(name = "dsvar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a simulated dataset (CSV trials + manifest).
    Simulate(SimulateArgs),
    /// Fit the model to the train split of a manifest.
    Train(RunArgs),
    /// Per-frame regime labels with state probabilities.
    Segment(RunArgs),
    /// Rolling one-step-ahead prediction on the test split.
    Predict(PredictArgs),
    /// Trajectories generated with the state held fixed.
    Generate(GenerateArgs),
    /// Fill missing entries of the train trials.
    Impute(RunArgs),
}

/// Options shared by every model command.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Named settings: pendulum, synthetic2, salsa, bat, walking, golf.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Comma-separated lag set, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    pub lags: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Observation noise std in standardized units.
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Independent initializations; the best ELBO wins.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Learn a bias on the transition logits.
    #[arg(long)]
    pub transition_bias: bool,
    /// Force a single state (no switching).
    #[arg(long)]
    pub no_switch: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "DSVAR_OUT", default_value = "dsvar-out")]
    pub out: PathBuf,
    /// Checkpoint to read (defaults to `<out>/checkpoint.json`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Sampled rollouts per frame for the 5–95% band (0 disables).
    #[arg(long, default_value_t = 100)]
    pub interval_samples: usize,
    /// Use a sampled latent rather than the conditional mean.
    #[arg(long)]
    pub sample: bool,
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    /// Only this state (default: every state).
    #[arg(long)]
    pub state: Option<usize>,
    /// Emit conditional means instead of samples.
    #[arg(long)]
    pub mean: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// pendulum or synthetic2.
    #[arg(long, default_value = "pendulum")]
    pub preset: String,
    /// Frames (pendulum: total, split in halves; synthetic2: train length).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Fraction of train entries to hide, at random.
    #[arg(long, default_value_t = 0.0)]
    pub mask_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "DSVAR_OUT", default_value = "dsvar-out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Segment(a) => commands::segment(a),
        Command::Predict(a) => commands::predict(a),
        Command::Generate(a) => commands::generate(a),
        Command::Impute(a) => commands::impute(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
