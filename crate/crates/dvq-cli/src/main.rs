//! `dvq` — experiment driver for the vector-quantization laboratory.
//!
//! Subcommands generate datasets, run the static-prior and autoencoder
//! experiments, ingest CIFAR-10, and aggregate results. Every run writes
//! `manifest.json` (the resolved config and seed) before computing, so any
//! artifact directory documents how to reproduce itself. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 diverged run.

mod config;
mod context;
mod experiment;
mod gen;
mod ingest;
mod report;
mod train;

use clap::{Parser, Subcommand};
use context::{CliError, CliResult};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dvq", version, about = "Depthwise vector quantization experiments")]
struct Cli {
    /// Experiment configuration (TOML with a `schema` field).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the seed recorded in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Directory for manifest and artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker pool size (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Force fully serial execution (implies a single worker and disables
    /// data-parallel gradient accumulation).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Resolve and print the run plan without computing or writing.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset with known components.
    GenBlobs,
    /// Generate a synthetic shape-image dataset.
    GenShapes,
    /// Run static-prior quantizer training over a Monte-Carlo grid.
    StaticExperiment,
    /// Train the autoencoder with a quantized bottleneck.
    TrainAe,
    /// Convert CIFAR-10 binary batches to the internal dataset format.
    IngestCifar {
        /// Batch files (`data_batch_*.bin`, `test_batch.bin`), concatenated
        /// in the order given.
        #[arg(required = true, value_name = "FILE")]
        files: Vec<PathBuf>,
        /// Pixel range of the converted dataset.
        #[arg(long, value_enum, default_value = "unit")]
        scale: ingest::PixelScale,
    },
    /// Merge results.csv tables and aggregate to mean +/- std per cell.
    Report {
        /// results.csv files from one or more runs.
        #[arg(required = true, value_name = "FILE")]
        inputs: Vec<PathBuf>,
    },
}

/// The global flags, grouped for passing into command implementations.
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    pub dry_run: bool,
}

/// Commands without a config file or randomness reject the flags that
/// would otherwise be ignored silently.
fn reject_flag<T>(flag: Option<&T>, name: &str, command: &str) -> CliResult<()> {
    if flag.is_some() {
        return Err(CliError::Config(format!("{command} does not take {name}")));
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn init_pool(workers: Option<usize>, deterministic: bool) -> CliResult<()> {
    let threads = if deterministic { Some(1) } else { workers };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--workers must be >= 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("could not size the worker pool: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_pool(workers: Option<usize>, _deterministic: bool) -> CliResult<()> {
    if workers.is_some() {
        eprintln!("note: this build is sequential; --workers has no effect");
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_pool(cli.workers, cli.deterministic)?;
    let args = CommonArgs {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        deterministic: cli.deterministic,
        dry_run: cli.dry_run,
    };
    match cli.command {
        Command::GenBlobs => gen::gen_blobs(&args),
        Command::GenShapes => gen::gen_shapes(&args),
        Command::StaticExperiment => experiment::static_experiment(&args),
        Command::TrainAe => train::train_ae(&args),
        Command::IngestCifar { files, scale } => {
            reject_flag(args.config.as_ref(), "--config", "ingest-cifar")?;
            reject_flag(args.seed.as_ref(), "--seed", "ingest-cifar")?;
            ingest::ingest_cifar(&files, scale, args.out.as_deref(), args.dry_run)
        }
        Command::Report { inputs } => {
            reject_flag(args.config.as_ref(), "--config", "report")?;
            reject_flag(args.seed.as_ref(), "--seed", "report")?;
            report::report(&inputs, args.out.as_deref(), args.dry_run)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
