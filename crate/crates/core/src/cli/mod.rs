//! `gene` command line: synthesise data, recognise and train genes, train
//! the predictor, predict, evaluate and export distributions.
//!
//! Every command resolves its options as built-in defaults, then an optional
//! `--config` JSON object, then explicit flags, and prints a fingerprint of
//! the resolved configuration.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{
    fingerprint, AssignConfig, EvalConfig, ExportConfig, PredictConfig, SynthConfig, TrainCommandConfig,
    TrainGenesConfig,
};

use crate::error::GeneError;

#[derive(Parser, Debug)]
#[command(name = "gene", version, about = "Gene recognition, generation and application for multivariate time series")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic mixture dataset.
    Synth(SynthArgs),
    /// Recognise genes and export the window assignment.
    Assign(AssignArgs),
    /// Recognise genes, then train the gene networks.
    TrainGenes(TrainGenesArgs),
    /// Train the predictor end to end from a gene checkpoint.
    Train(TrainArgs),
    /// Predict with a trained predictor.
    Predict(PredictArgs),
    /// Score predictions, or run the sanity baselines.
    Eval(EvalArgs),
    /// Export real and generated values per gene.
    ExportDist(ExportArgs),
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// JSON object of options; explicit flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

macro_rules! flag_struct {
    ($name:ident { $($(#[$m:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Args, Debug, Serialize)]
        struct $name {
            #[command(flatten)]
            #[serde(flatten)]
            common: Common,
            $(
                $(#[$m])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                $field: Option<$ty>,
            )*
        }
    };
}

flag_struct!(SynthArgs {
    out: PathBuf,
    samples_per_cluster: usize,
    clusters: usize,
    windows: usize,
    points: usize,
    variables: usize,
    /// none, value or event.
    task: String,
});

flag_struct!(AssignArgs {
    data: PathBuf,
    /// Assignment CSV.
    out: PathBuf,
    report: PathBuf,
    /// Where to save the fitted classifier.
    checkpoint: PathBuf,
    k: usize,
    rounds: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    tol: f64,
    hidden: usize,
});

flag_struct!(TrainGenesArgs {
    data: PathBuf,
    checkpoint: PathBuf,
    report: PathBuf,
    k: usize,
    rounds: usize,
    assign_epochs: usize,
    assign_lr: f64,
    tol: f64,
    classifier_hidden: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    latent: usize,
    hidden: usize,
    /// adversarial or encoder-only.
    objective: String,
});

flag_struct!(TrainArgs {
    data: PathBuf,
    /// Gene checkpoint written by train-genes.
    genes: PathBuf,
    checkpoint: PathBuf,
    report: PathBuf,
    /// value or event.
    task: String,
    epochs: usize,
    batch: usize,
    lr: f64,
    fine_tune_lr: f64,
    lambda1: f64,
    lambda2: f64,
    train_frac: f64,
    val_frac: f64,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    freeze_genes: bool,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    class_weights: bool,
    fusion_hidden: usize,
    head_hidden: usize,
});

flag_struct!(PredictArgs {
    data: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
});

flag_struct!(EvalArgs {
    data: PathBuf,
    pred: PathBuf,
    /// value or event.
    task: String,
    positive: i64,
    report: PathBuf,
    /// Score the persistence or 1NN baseline on a held-out split instead.
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    baseline: bool,
    train_frac: f64,
    val_frac: f64,
});

flag_struct!(ExportArgs {
    data: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
    /// Real windows per gene.
    cap: usize,
});

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 data, 3 numeric.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Synth(a) => config::resolve::<SynthConfig, _>(&a.common, &a).and_then(|c| commands::synth(&c)),
        Command::Assign(a) => config::resolve::<AssignConfig, _>(&a.common, &a).and_then(|c| commands::assign(&c)),
        Command::TrainGenes(a) => {
            config::resolve::<TrainGenesConfig, _>(&a.common, &a).and_then(|c| commands::train_genes(&c))
        }
        Command::Train(a) => config::resolve::<TrainCommandConfig, _>(&a.common, &a).and_then(|c| commands::train(&c)),
        Command::Predict(a) => config::resolve::<PredictConfig, _>(&a.common, &a).and_then(|c| commands::predict(&c)),
        Command::Eval(a) => config::resolve::<EvalConfig, _>(&a.common, &a).and_then(|c| commands::eval(&c)),
        Command::ExportDist(a) => {
            config::resolve::<ExportConfig, _>(&a.common, &a).and_then(|c| commands::export_dist(&c))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &GeneError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}
