use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::ModelOpts;

/// Exit status for bad invocations.
const EXIT_USAGE: u8 = 1;
/// Exit status for unreadable data, bad models and failed checks.
const EXIT_DATA: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "charlid", version, about = "Character-level CNN text classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model with dev-loss early stopping
    Train(TrainArgs),
    /// Train one model on all data for a fixed number of epochs
    TrainFixed(TrainFixedArgs),
    /// Train independently seeded members and save them as a directory
    Ensemble(EnsembleArgs),
    /// Label each line of a text file
    Predict(PredictArgs),
    /// Score a model or ensemble on labelled data
    Evaluate(EvaluateArgs),
    /// Score a majority-class or uniformly random predictor
    Baseline(BaselineArgs),
    /// Compare analytic and finite-difference gradients on tiny models
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training data, one `text<TAB>label` per line
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Separate dev data
    #[arg(long, value_name = "FILE", conflicts_with = "dev_split")]
    pub dev: Option<PathBuf>,
    /// Fraction of the training data held out for dev [default: 0.1]
    #[arg(long, value_name = "FRACTION")]
    pub dev_split: Option<f64>,
    #[command(flatten)]
    pub opts: ModelOpts,
    #[arg(long, env = "CHARLID_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Model file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the epoch table here
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainFixedArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Epochs to train
    #[arg(long)]
    pub epochs: usize,
    #[command(flatten)]
    pub opts: ModelOpts,
    #[arg(long, env = "CHARLID_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Model file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Number of members
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Members trained concurrently
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub opts: ModelOpts,
    /// Base seed; member i uses seed + i
    #[arg(long, env = "CHARLID_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model file or ensemble directory
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// One text per line
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Defaults to stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Append class probabilities in label order
    #[arg(long)]
    pub probs: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Write the confusion matrix as CSV
    #[arg(long, value_name = "FILE")]
    pub confusion_out: Option<PathBuf>,
    /// Row-normalize the confusion matrix
    #[arg(long)]
    pub normalize: bool,
    /// Average macro F1 over every known class, not only those in the test data
    #[arg(long)]
    pub include_absent: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Majority,
    Random,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    #[arg(long, env = "CHARLID_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Finite-difference step
    #[arg(long, default_value_t = charlid::model::DEFAULT_EPSILON)]
    pub epsilon: f64,
}

/// Invalid combination of otherwise well-formed arguments.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Train(a) => commands::train(a)?,
        Command::TrainFixed(a) => commands::train_fixed(a)?,
        Command::Ensemble(a) => commands::ensemble(a)?,
        Command::Predict(a) => commands::predict_cmd(a)?,
        Command::Evaluate(a) => commands::evaluate(a)?,
        Command::Baseline(a) => commands::baseline(a)?,
        Command::Gradcheck(a) => return commands::gradcheck(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_DATA),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
