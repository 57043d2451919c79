//! `stochrel` command-line interface.
//!
//! Every command reads an optional TOML run configuration; command-line
//! flags win over the file. Outputs go to `--out-dir` (default `.`). Errors
//! are printed to stderr as one JSON object.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{EmulatorKind, MethodName};

#[derive(Parser, Debug)]
#[command(
    name = "stochrel",
    version,
    about = "Emulator-based reliability analysis of stochastic simulators"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit an emulator to a dataset CSV.
    Fit(FitArgs),
    /// Evaluate a model at given points: mean, std, s(x), and F/f at y.
    Predict(PredictArgs),
    /// Estimate Pf = E[s(X)] with a fitted model.
    Reliability(ReliabilityArgs),
    /// Repetition study of one method on a named benchmark.
    Benchmark(BenchmarkArgs),
    /// Repetition study comparing several methods on one benchmark.
    Study(StudyArgs),
}

#[derive(Args, Debug, Default)]
pub struct FitArgs {
    /// Dataset CSV (`x1..xM,y` or `group_id,x1..xM,y`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub emulator: Option<EmulatorKind>,
    /// Use the input distribution of a named benchmark.
    #[arg(long)]
    pub inputs_from: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV of points with header `x1..xM` (extra columns are ignored).
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Tensor grid with this many points per input over the central 99% box.
    #[arg(long, conflicts_with = "points")]
    pub grid: Option<usize>,
    /// Also report F(y|x) and f(y|x) at this response value.
    #[arg(long, allow_hyphen_values = true)]
    pub y: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct ReliabilityArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Monte Carlo draws of the inputs.
    #[arg(long)]
    pub n_mcs: Option<usize>,
    /// Also write this many (x, s(x)) rows to s_sample.csv.
    #[arg(long)]
    pub s_sample: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct BenchmarkArgs {
    /// rs, beam or synthetic-wind.
    pub name: Option<String>,
    /// Comma-separated experimental design sizes.
    #[arg(long, value_delimiter = ',')]
    pub ed_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum)]
    pub emulator: Option<MethodName>,
    #[arg(long)]
    pub n_mcs: Option<usize>,
    /// Print the closed-form Pf and exit.
    #[arg(long)]
    pub analytic_only: bool,
}

#[derive(Args, Debug, Default)]
pub struct StudyArgs {
    pub benchmark: Option<String>,
    /// Comma-separated methods.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodName>>,
    #[arg(long, value_delimiter = ',')]
    pub ed_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n_mcs: Option<usize>,
}

/// A failure reported to the user.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new("validation", message)
    }

    fn exit_code(&self) -> u8 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl From<stochrel::Error> for CliError {
    fn from(e: stochrel::Error) -> Self {
        use stochrel::Error as E;
        let kind = match &e {
            E::Domain(_) | E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::Precondition(_) => {
                "validation"
            }
            E::NonFinite { .. } | E::Degenerate(_) | E::Dataset { .. } | E::Csv(_) => "data",
            E::FitFailed(_) => "fit",
            E::Unsupported(_) => "unsupported",
            E::Io(_) => "io",
            E::Json(_) => "format",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("format", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new("data", e.to_string())
    }
}

fn report(err: &CliError) {
    #[derive(Serialize)]
    struct Body<'a> {
        kind: &'a str,
        message: &'a str,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        schema: &'static str,
        error: Body<'a>,
    }
    let out = Out {
        schema: "stochrel.error.v1",
        error: Body {
            kind: err.kind,
            message: &err.message,
        },
    };
    eprintln!("{}", serde_json::to_string(&out).expect("error serializes"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            report(&CliError::new("usage", msg.trim_end()));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code())
        }
    }
}
