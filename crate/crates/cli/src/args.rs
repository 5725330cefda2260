use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "spatial-abundance",
    version,
    about = "Fit and evaluate the spatial abundance model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the joint model to a surveillance panel.
    Fit(Common),
    /// Write one simulated data set in the fit input formats.
    Simulate(Common),
    /// Run the model comparison over simulated replicates.
    Evaluate(Common),
    /// Recompute posterior summaries from persisted draws.
    Summarize(SummarizeArgs),
}

/// Flags shared by every subcommand. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Plain-text `key = value` config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    /// Fit output directory, or a directory of `chain_*.csv` draw files.
    #[arg(value_name = "DRAWS")]
    pub draws: PathBuf,
    #[command(flatten)]
    pub common: Common,
}
