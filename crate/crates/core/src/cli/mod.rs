//! `recipe-edit` command line: dataset building, training, editing,
//! evaluation and standalone constraint checking.

mod commands;
pub mod config;
pub mod run_dir;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Preset, RunConfig, CONFIG_ENV};

use crate::constraint::ConstraintId;
use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "recipe-edit", version, about = "Edit recipes to satisfy dietary constraints")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Run directory for all artifacts of this command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a corpus, build the vocabulary, pair recipes and split.
    BuildDataset(BuildArgs),
    /// Train the ingredient editor or the step generator.
    Train {
        #[command(subcommand)]
        what: TrainWhat,
    },
    /// Edit base recipes for a constraint.
    Edit(EditArgs),
    /// Score edited recipes against gold pairs.
    Evaluate(EvaluateArgs),
    /// Run the constraint checker over edited recipes.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long)]
    pub min_recipe_count: Option<usize>,
    #[arg(long)]
    pub overlap_min: Option<f64>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TrainWhat {
    Ingredients(TrainArgs),
    Steps(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `build-dataset`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Learning-rate grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lr: Vec<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// 0 disables early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Steps only: train on the targets of training pairs instead of every
    /// training-split recipe.
    #[arg(long)]
    pub paired_data_only: bool,
    /// Steps only: drop the copy path.
    #[arg(long)]
    pub no_copy_attention: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum System {
    /// Learned editor and generator.
    Share,
    /// Substitution-rule baseline.
    Rule,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub editor: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "share")]
    pub system: System,
    #[arg(long)]
    pub constraint: Option<ConstraintId>,
    /// Base recipe id from the dataset; repeatable.
    #[arg(long = "base-id")]
    pub base_ids: Vec<String>,
    /// A raw recipe JSON file to edit instead of a dataset recipe.
    #[arg(long)]
    pub base_file: Option<PathBuf>,
    /// Edit the base of every pair in this split (`train`, `val`, `test`).
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub hard_filter: bool,
    #[arg(long)]
    pub blacklist: bool,
    /// Also write a side-by-side text rendering.
    #[arg(long)]
    pub side_by_side: bool,
    /// Sample the ingredient count instead of thresholding.
    #[arg(long)]
    pub sample_k: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `edited.jsonl` from `edit`.
    #[arg(long)]
    pub outputs: PathBuf,
    /// Pair file; defaults to the test split of `--data`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON lines of edited recipes.
    #[arg(long)]
    pub recipes: PathBuf,
}

/// Exit code for an error: 1 for validation and configuration problems, 2
/// for runtime and numeric failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain().find_map(|e| e.downcast_ref::<Error>()).map_or(2, Error::exit_code)
}

/// Parses arguments and runs one command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| anyhow::Error::new(UsageError(e)))?;
    commands::dispatch(cli)
}

/// Runs and converts the outcome into a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            if let Some(UsageError(ce)) = e.downcast_ref::<UsageError>() {
                let _ = ce.print();
                return if ce.use_stderr() { 1 } else { 0 };
            }
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(clap::Error);
