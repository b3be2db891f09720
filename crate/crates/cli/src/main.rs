//! `jplrdl`: train, evaluate and inspect joint projection / low-rank
//! dictionary models from the command line.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jplrdl_core::CorruptionKind;
use serde_json::Value;

mod commands;
mod report;
mod run_config;

use run_config::{parse_set, parse_shape};

#[derive(Debug)]
pub enum CliError {
    Core(jplrdl_core::Error),
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(msg) => f.write_str(msg),
        }
    }
}

impl From<jplrdl_core::Error> for CliError {
    fn from(e: jplrdl_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "jplrdl",
    version,
    about = "Joint projection and low-rank dictionary learning"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for the command's randomness (training, corruption or splitting).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Sample matrix (text or .csv), one column per sample.
    #[arg(long, value_name = "PATH")]
    pub matrix: Option<PathBuf>,
    /// Labels file, one integer per line.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// Image shape of every column, e.g. 32x32.
    #[arg(long, value_parser = parse_shape, value_name = "HxW")]
    pub image_shape: Option<(usize, usize)>,
    /// Largest possible pixel value (default 255).
    #[arg(long)]
    pub value_max: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes model.bin and metrics.json.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Override a training parameter, e.g. --set d=12 (repeatable).
        #[arg(long = "set", value_parser = parse_set, value_name = "KEY=VALUE")]
        sets: Vec<(String, Value)>,
    },
    /// Classify a labeled test set and report accuracy; writes eval.json.
    Eval {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Label every column of a matrix; writes predictions.txt and predictions.json.
    Classify {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        matrix: Option<PathBuf>,
    },
    /// Simulate pixel, uniform-noise or block corruption.
    Corrupt {
        #[arg(long, value_name = "PATH")]
        matrix: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, value_parser = parse_shape, value_name = "HxW")]
        image_shape: Option<(usize, usize)>,
        #[arg(long)]
        value_max: Option<f64>,
        /// Occluder image for block corruption (matrix file) instead of a random texture.
        #[arg(long, value_name = "PATH")]
        patch: Option<PathBuf>,
        /// Output matrix path; defaults to <out>/corrupted.txt.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Seeded per-class train/test split.
    Split {
        #[command(flatten)]
        data: DataArgs,
        /// Training samples taken from every class.
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Export the per-class RPCA split or the neighborhood graphs.
    Diag {
        #[arg(value_enum)]
        which: DiagWhich,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "set", value_parser = parse_set, value_name = "KEY=VALUE")]
        sets: Vec<(String, Value)>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Pixel,
    Block,
    Uniform,
}

impl From<KindArg> for CorruptionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Pixel => CorruptionKind::Pixel,
            KindArg::Block => CorruptionKind::Block,
            KindArg::Uniform => CorruptionKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiagWhich {
    Rpca,
    Graphs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
