//! `qcorr`: generate, balance and split state datasets, train classifiers
//! and run the feature-reduction sweep.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Switch;

#[derive(Parser, Debug)]
#[command(name = "qcorr", version, about = "Two-qubit correlation classification from collective measurements")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Single-threaded reference mode for bitwise-reproducible outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// key = value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample random states and store their features, quantities and labels.
    Gen(GenArgs),
    /// Subsample a dataset to equal class counts.
    Equalize(EqualizeArgs),
    /// Stratified train/validation/test split into a directory.
    Split(SplitArgs),
    /// Train one classifier on a split directory.
    Train(TrainArgs),
    /// Score a trained classifier on a dataset.
    Eval(EvalArgs),
    /// Train and score one classifier per feature-vector length.
    Sweep(SweepArgs),
    /// Regenerate CSV reports from a sweep directory.
    Report(ReportArgs),
    /// Run the oracle and invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `haar` (random unitary with stick-breaking spectrum) or `hs`.
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the records as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EqualizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// `paper` or `custom:<priority list>` of indices or names, e.g. `custom:p22,p14,...`.
    #[arg(long)]
    pub plan: Option<String>,
    #[arg(long)]
    pub bn_input: Option<Switch>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub phase2_learning_rate: Option<f64>,
    #[arg(long)]
    pub phase1_batch: Option<usize>,
    #[arg(long)]
    pub phase2_batch: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Split directory.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_features: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset file, or a split directory whose test part is used.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub subsets: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Split directory.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Lengths to train, comma separated (default 10 down to 1).
    #[arg(long)]
    pub lengths: Option<String>,
    /// Train the zero-feature baseline too.
    #[arg(long)]
    pub baseline: Option<Switch>,
    #[arg(long)]
    pub subsets: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Sweep output directory containing `sweep.json`.
    #[arg(long)]
    pub sweep: PathBuf,
    /// Where to write the CSVs (defaults to the sweep directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub oracle_states: Option<usize>,
    #[arg(long)]
    pub hierarchy_states: Option<usize>,
    #[arg(long)]
    pub gradient_configs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
