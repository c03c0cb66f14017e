//! `bvmdesign`: staged pipeline from simulated training data to design
//! operating characteristics. Each stage reads and writes files, so the
//! expensive training step runs once and feeds any number of evaluations.

mod commands;
mod config;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "bvmdesign", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the lambda training set over the design box.
    Train {
        /// Number of training points (overrides the config).
        #[arg(long)]
        k: Option<usize>,
        /// Replicates per point (overrides the config).
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Fit the BART ensemble to log lambda.
    Fit,
    /// Leave-one-out predictions at every training point.
    Loocv,
    /// Assurance, stopping probabilities, IESS and IEC for each design.
    Evaluate {
        #[command(flatten)]
        sampling: Sampling,
        /// Design files (default: the config's designs).
        #[arg(long = "design")]
        designs: Vec<PathBuf>,
        /// Skip the per-state uncertainty intervals.
        #[arg(long)]
        no_uncertainty: bool,
    },
    /// Cumulative efficacy integrated over the nuisance prior on a psi grid.
    Curve {
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long = "design")]
        designs: Vec<PathBuf>,
        /// Comma-separated psi values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Grid size over the prior mean of psi +/- 3 sd.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Side-by-side table of several designs on common random numbers.
    Compare {
        #[command(flatten)]
        sampling: Sampling,
        /// Design files (default: the config's designs).
        designs: Vec<PathBuf>,
    },
    /// Rank candidate designs by the configured objective.
    Optimize {
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Full simulate-and-fit Monte Carlo operating characteristics.
    Oracle {
        #[arg(long = "design")]
        designs: Vec<PathBuf>,
        #[arg(long)]
        nsim: Option<usize>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = bvmdesign_service::DEFAULT_PORT)]
        port: u16,
        /// Directory that relative artifact paths resolve against.
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Sampling {
    /// Design-prior draws (overrides the config).
    #[arg(long)]
    pub prior_draws: Option<usize>,
    /// Multivariate normal draws (overrides the config).
    #[arg(long)]
    pub mvn_draws: Option<usize>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .filter_map(|c| c.downcast_ref::<bvmdesign_core::Error>())
        .any(|c| c.is_numerical());
    if numerical {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    commands::run(&cli.global, cli.command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
