use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Impute missing values and predict labels in tabular data.
#[derive(Parser, Debug)]
#[command(name = "bcgnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a missingness mask and its parameter sidecar.
    Genmask(GenmaskArgs),
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train(TrainArgs),
    /// Fill missing cells with a trained model.
    Impute(ImputeArgs),
    /// Fill missing cells with the Mean or KNN baseline.
    Baseline(BaselineArgs),
    /// Score an imputed table against the ground truth.
    Eval(EvalArgs),
    /// Predict labels with a trained model.
    Predict(PredictArgs),
    /// Write a synthetic benchmark table.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct GenmaskArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum)]
    mechanism: MechanismArg,
    /// One rate for all features, or a comma-separated rate per feature.
    #[arg(long)]
    rate: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mask CSV; the parameters go to `<out>.spec.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run configuration (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Mask CSV (1 = observed) applied on top of the data's empty cells.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: Option<PathBuf>,
    /// Training log; defaults to `<checkpoint>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the 20000-epoch profile as the base configuration.
    #[arg(long)]
    full: bool,
    /// Train the label head jointly (7:3 split of labelled rows).
    #[arg(long)]
    label_task: bool,
    /// Zero all correlation signs, removing feature-to-feature messages.
    #[arg(long)]
    ablate_interdependence: bool,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// The rows are unseen observations.
    #[arg(long)]
    new_data: bool,
    /// Class distributions of categorical cells; defaults to
    /// `<out>.dist.csv`.
    #[arg(long)]
    distributions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mean")]
    method: BaselineMethod,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineMethod {
    Mean,
    Knn,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    imputed: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Adds embedding-space sizes of the trained model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-feature MAE as CSV.
    #[arg(long)]
    per_feature_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Label split written by `train`; scores the held-out rows.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Predictions CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for data.csv, schema.json and truth.json.
    #[arg(long)]
    out: PathBuf,
    /// Draw every feature from its own latent factor.
    #[arg(long)]
    independent: bool,
    /// Number of trailing features made 3-class categorical.
    #[arg(long, default_value_t = 0)]
    categorical: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bcgnn::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use bcgnn::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::Io(_) | E::Json(_) => 2,
                E::Numeric(_) => 4,
                E::Shape(_) | E::Data(_) | E::Parse { .. } | E::Schema(_) | E::Checkpoint(_) | E::Csv(_) => 3,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// `path` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Genmask(a) => commands::genmask(a),
        Command::Train(a) => commands::train(a),
        Command::Impute(a) => commands::impute(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
