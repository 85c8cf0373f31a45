use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod diff;
mod maps;
mod protect;

#[derive(Debug, Parser)]
#[command(name = "impasto", version, about = "Perception-aware image protection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Protect one or more PNG images.
    Protect(ProtectArgs),
    /// Write the perceptual maps of an image as grayscale PNGs.
    Maps(MapsArgs),
    /// Render `|a − b|·gain` as a PNG.
    Diff(DiffArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMode {
    Surrogate,
    Remote,
}

#[derive(Debug, Args)]
pub struct ProtectArgs {
    /// Input PNG; repeat for a batch.
    #[arg(long = "input", short = 'i', required = true)]
    pub inputs: Vec<PathBuf>,
    /// Target image for the encoder term, or `grid`.
    #[arg(long, default_value = "grid")]
    pub target: String,
    /// photoguard, advdm, mist, anti-db or diff-protect.
    #[arg(long)]
    pub preset: Option<String>,
    /// L∞ budget in [0,1] units.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Steps between weight refinements and difficulty updates.
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long, value_enum, default_value_t = OracleMode::Surrogate)]
    pub oracle: OracleMode,
    /// `host:port` or `unix:/path` of a guidance worker.
    #[arg(long, env = "IMPASTO_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; one subdirectory per input.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// JSON configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample depth of protected.png.
    #[arg(long, default_value_t = 16, value_parser = PossibleValuesParser::new(["8", "16"]).map(|s| s.parse::<u8>().unwrap()))]
    pub bits: u8,
    /// Parallel runs; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MapsArgs {
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    /// Display pixels per degree of visual angle.
    #[arg(long, default_value_t = impasto_core::jnd::DEFAULT_PPD)]
    pub ppd: f64,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gain: f64,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or configuration, detected before any work.
    Usage(anyhow::Error),
    /// Work started and at least one item failed.
    Run(anyhow::Error),
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure::Usage(e.into())
    }

    pub fn run(e: impl Into<anyhow::Error>) -> Self {
        Failure::Run(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Protect(a) => protect::run(a),
        Command::Maps(a) => maps::run(a),
        Command::Diff(a) => diff::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
