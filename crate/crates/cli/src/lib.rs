//! `mdetect` command surface.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 partial per-item
//! failure, 3 endpoint failure.

pub mod align;
pub mod commands;
pub mod pair;
pub mod settings;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use settings::{process_env, EnvLookup, RunFlags};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Usage,
    Partial,
    Endpoint,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Usage => 1,
            ExitStatus::Partial => 2,
            ExitStatus::Endpoint => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Usage,
            error: error.into(),
        }
    }

    pub fn endpoint(error: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Endpoint,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Anything not classified otherwise is a usage or input error.
impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(error: E) -> Self {
        CliError::usage(error)
    }
}

pub type CmdResult = Result<ExitStatus, CliError>;

#[derive(Parser, Debug)]
#[command(name = "mdetect", version, about = "Corrupt-and-recover detection of generated images")]
pub struct Cli {
    /// JSON run configuration (overridden by MD_* variables and flags).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More logging (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        match (self.quiet, self.verbose) {
            (true, _) => "warn",
            (false, 0) => "info",
            (false, 1) => "debug",
            _ => "trace",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score every manifest image and optionally threshold it.
    Detect(commands::DetectArgs),
    /// Pick tau from the fake scores of a labeled score file.
    Calibrate(commands::CalibrateArgs),
    /// AUROC, AP and FPR at 95% TPR for a score file.
    Evaluate(commands::EvaluateArgs),
    /// Write one corruption mask as a PNG.
    MaskGen(commands::MaskGenArgs),
    /// Run a theory experiment.
    Simulate(commands::SimulateArgs),
    /// Collect generated images and fine-tune the recovery model on them.
    Align(align::AlignArgs),
    /// Build a real/fake paired dataset via captioning and generation.
    PairBuild(pair::PairArgs),
}

pub fn run(cli: Cli, env: EnvLookup<'_>) -> CmdResult {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Detect(a) => commands::detect(&a, config, env),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::MaskGen(a) => commands::mask_gen(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Align(a) => align::run(&a, config, env),
        Command::PairBuild(a) => pair::run(&a, config, env),
    }
}
