//! Command-line front end: simulate scans, focus the aperture, sweep the
//! cost along one coordinate and reconstruct depth profiles.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use codedfocus::{Coordinate, Error};

pub use config::ExperimentConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Failure not covered by a more specific code.
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const NO_PIXELS: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "codedfocus", version, about = "Coded-aperture Laue microscope toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a coded-aperture scan and write it as CSV plus sidecar.
    Simulate(SimulateArgs),
    /// Find the aperture pose that focuses the scan onto the origin.
    Autofocus(AutofocusArgs),
    /// Evaluate both fidelity terms along one pose coordinate.
    Sweep(SweepArgs),
    /// Recover depth profiles under a given pose.
    Reconstruct(ReconstructArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Scan CSV; its sidecar is the same path with a .json extension.
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Split the scan into this many equal segments.
    #[arg(long, value_name = "N")]
    pub bins: Option<usize>,
    /// Minimum Poisson SNR of a usable pixel.
    #[arg(long, value_name = "X")]
    pub snr_min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Sample model JSON replacing the configured sample.
    #[arg(long, value_name = "PATH")]
    pub sample: Option<PathBuf>,
    /// Write expected counts without Poisson noise.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Args)]
pub struct AutofocusArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "NAME")]
    pub coordinate: Coordinate,
    /// Absolute coordinate values, μm or degrees.
    #[arg(long, value_name = "LO:HI", value_parser = parse_range, allow_hyphen_values = true)]
    pub range: (f64, f64),
    #[arg(long, value_name = "N", default_value_t = 41)]
    pub points: usize,
    /// Pose the other coordinates are held at; defaults to the configured
    /// initial pose.
    #[arg(long, value_name = "PATH")]
    pub pose: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub pose: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("range must satisfy LO <= HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::InvalidArgument(_) => exit::CONFIG,
        Error::NoPixels | Error::NoSignal(_) => exit::NO_PIXELS,
        Error::Convergence { .. } => exit::NOT_CONVERGED,
        _ => exit::FAILURE,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Autofocus(a) => commands::autofocus(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
