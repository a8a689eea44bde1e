//! `tdm` — command-line front end for the travel-demand surrogate pipeline.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numerical failure.

mod commands;
mod manifest;
mod plot;

use clap::{Args, Parser, Subcommand};
use tdm_core::CoreError;

#[derive(Parser)]
#[command(name = "tdm", version, about = "Synthetic travel-demand surrogate pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus and write train/val/test splits.
    GenData(GenDataArgs),
    /// Train a surrogate model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and export per-link predictions.
    Eval(EvalArgs),
    /// Exhaustive hyperparameter grid search ranked by validation metric.
    Gridsearch(GridArgs),
    /// Render predicted-vs-true and error-vs-size plots from a predictions CSV.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct SharedArgs {
    /// Base RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for artifacts (created if missing).
    #[arg(long, default_value = "out")]
    out: std::path::PathBuf,
    /// JSON file whose fields override the matching flags.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
}

#[derive(Args, Clone)]
struct GenDataArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Number of samples to generate.
    #[arg(long, default_value_t = 300)]
    samples: usize,
    #[arg(long, default_value_t = 15)]
    min_nodes: usize,
    #[arg(long, default_value_t = 40)]
    max_nodes: usize,
    /// Training fraction; validation and test share the remainder equally.
    #[arg(long, default_value_t = 0.70)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    val_fraction: f64,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Layer family.
    #[arg(long, default_value = "gatv3")]
    model: String,
    /// Number of graph layers (0 = MLP baseline).
    #[arg(long, default_value_t = 20)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Initial-residual weight for gcnii/gatv3.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Identity-decay strength for gcnii.
    #[arg(long, default_value_t = 1.5)]
    theta: f64,
    /// Attention heads for gatv2/gatv3.
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 0.25)]
    dropout: f64,
    /// Enable per-graph feature normalization layers.
    #[arg(long, default_value_t = false)]
    graph_norm: bool,
    /// Bucket scheme for classification.
    #[arg(long, default_value = "coarse3")]
    buckets: String,
    /// cls = bucket classification, reg = direct flow regression.
    #[arg(long, default_value = "cls")]
    task: String,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Training split file.
    #[arg(long)]
    train: std::path::PathBuf,
    /// Validation split file.
    #[arg(long)]
    val: std::path::PathBuf,
    /// Additional dataset merged into the training split.
    #[arg(long)]
    extra_train: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    patience: usize,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Checkpoint produced by `tdm train`.
    #[arg(long)]
    checkpoint: std::path::PathBuf,
    /// Dataset to score.
    #[arg(long)]
    data: std::path::PathBuf,
    /// Bucket scheme (classification checkpoints only).
    #[arg(long, default_value = "coarse3")]
    buckets: String,
    #[arg(long, default_value = "cls")]
    task: String,
}

#[derive(Args, Clone)]
struct GridArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    train: std::path::PathBuf,
    #[arg(long)]
    val: std::path::PathBuf,
    /// Comma-separated depth axis.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 50, 70])]
    grid_layers: Vec<usize>,
    /// Comma-separated width axis.
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 256, 512])]
    grid_hidden: Vec<usize>,
    /// Comma-separated residual-weight axis (gcnii only).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.4])]
    grid_alpha: Vec<f64>,
    /// Comma-separated decay axis (gcnii only).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.5])]
    grid_theta: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    patience: usize,
}

#[derive(Args, Clone)]
struct PlotArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// predictions.csv produced by `tdm eval`.
    #[arg(long)]
    predictions: std::path::PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Gridsearch(args) => commands::gridsearch(args),
        Command::Plot(args) => commands::plot(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Diverged(_) | CoreError::SampleFailed(_) | CoreError::RouteFailed => 3,
                _ => 2,
            };
        }
    }
    2
}
