//! `tenmi`: multiple imputation for incomplete tensors from the command line.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.
//! Failures print a single JSON object on stderr and exit nonzero.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "tenmi", version, about = "Bayesian multiple imputation for incomplete tensors")]
struct Cli {
    /// Worker threads for chains, folds and replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an engine and write posterior draws and summaries.
    Impute(ImputeArgs),
    /// Choose the CP rank by cross-validation.
    CvRank(CvArgs),
    /// Generate a synthetic design, optionally with engine comparisons.
    Simulate(SimulateArgs),
    /// Diversity trend over time with one of three interval methods.
    Diversity(DiversityArgs),
    /// Standardized-value histogram and per-time taxa correlations.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Tensor file (`i1,...,iN,value`, `NA` for missing).
    #[arg(long)]
    input: PathBuf,
    /// Descriptor JSON; defaults to `<input>.json` when present.
    #[arg(long)]
    descriptor: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MissingKind {
    Entry,
    Fiber,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Independent,
    Correlated,
    Em,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    study: u32,
    /// Comma-separated dimensions, e.g. `10,10,10`.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, value_enum, default_value = "entry")]
    missing: MissingKind,
    /// 1-based mode whose fibers go missing together (fiber missingness).
    #[arg(long, default_value_t = 2)]
    fiber_mode: usize,
    #[arg(long)]
    prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Noise sd for study 1.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Run this many replicates and write a metrics table.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["independent", "correlated", "em"])]
    engines: Vec<EngineArg>,
    #[arg(long, default_value_t = 600)]
    iterations: usize,
    #[arg(long, default_value_t = 300)]
    burn_in: usize,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Point,
    Observed,
    Mi,
}

#[derive(Args, Debug)]
struct DiversityArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Draws file from `impute`; required by `point` and `mi`.
    #[arg(long)]
    draws: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// 1-based time mode.
    #[arg(long)]
    time_mode: usize,
    /// 1-based taxa mode.
    #[arg(long)]
    taxa_mode: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Scale the simulated mean by sd instead of sd/√n.
    #[arg(long)]
    verbatim: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DiagnosticsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    time_mode: usize,
    #[arg(long)]
    taxa_mode: usize,
    /// Standardize within each taxon instead of globally.
    #[arg(long)]
    per_taxon: bool,
    /// Histogram bin edges (comma-separated, increasing).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    edges: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            commands::report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            commands::report_error("threads", &e.to_string());
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Impute(a) => commands::impute(a, cli.threads),
        Command::CvRank(a) => commands::cv_rank(a, cli.threads),
        Command::Simulate(a) => commands::simulate(a, cli.threads),
        Command::Diversity(a) => commands::diversity(a, cli.threads),
        Command::Diagnostics(a) => commands::diagnostics(a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            commands::report_anyhow(&e);
            ExitCode::FAILURE
        }
    }
}
