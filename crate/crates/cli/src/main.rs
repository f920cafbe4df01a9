//! `tensorkit`: tensor decompositions and moment-based mixture estimation
//! from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 no
//! convergence. Errors are reported on stderr as a single line starting with
//! `error[config]:`, `error[data]:` or `error[convergence]:`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tensorkit::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "tensorkit", version, about = "Tensor decompositions and spectral mixture estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// CP decomposition by alternating least squares.
    Cp(CpArgs),
    /// CP decomposition of an order-3 tensor by simultaneous diagonalization.
    Jennrich(JennrichArgs),
    /// Tucker decomposition by truncated HOSVD or HOOI.
    Tucker(TuckerArgs),
    /// Estimate a GMM or single-topic model from samples.
    Estimate(EstimateArgs),
    /// Draw synthetic samples plus a ground-truth sidecar.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Result path. Defaults to `<cmd>-result.json` in $TENSORKIT_OUTPUT_DIR
    /// or the working directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Store the wall time in the result (makes reruns differ).
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Random,
    Hosvd,
}

#[derive(Debug, Args)]
pub struct CpArgs {
    /// Tensor file.
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Normalize factor columns into the weights after every sweep.
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct JennrichArgs {
    /// Tensor file (order 3).
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TuckerMethod {
    Hosvd,
    Hooi,
}

#[derive(Debug, Args)]
pub struct TuckerArgs {
    /// Tensor file.
    pub input: PathBuf,
    /// Comma-separated ranks, one per mode.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ranks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = TuckerMethod::Hosvd)]
    pub method: TuckerMethod,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gmm,
    Topic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PathArg {
    Implicit,
    Materialized,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub k: usize,
    /// Point file (gmm) or document file (topic).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// How the whitened third moment is evaluated.
    #[arg(long, value_enum, default_value_t = PathArg::Implicit)]
    pub path: PathArg,
    /// Rescale the estimated weights to sum to 1.
    #[arg(long)]
    pub renormalize_weights: bool,
    /// Ground-truth sidecar from `generate`; adds recovery errors to the
    /// diagnostics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Ambient dimension (gmm) or vocabulary size (topic).
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub k: usize,
    /// Comma-separated mixing weights; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Noise standard deviation (gmm).
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Words per document (topic).
    #[arg(long, default_value_t = 3)]
    pub words_per_doc: usize,
    /// Number of samples or documents.
    #[arg(long)]
    pub n: usize,
    /// Seed for the sample draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the component parameters; defaults to `--seed`.
    #[arg(long)]
    pub spec_seed: Option<u64>,
    /// Sample file path; the sidecar is written next to it with a
    /// `.truth.json` suffix.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Convergence => 4,
    }
}

fn kind_label(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Convergence => "convergence",
    }
}

pub fn report(err: &Error) -> ExitCode {
    let kind = err.kind();
    let message = err.to_string().replace('\n', " ");
    eprintln!("error[{}]: {}", kind_label(kind), message);
    ExitCode::from(exit_code(kind))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[config]: {first} (see --help)");
            return ExitCode::from(exit_code(ErrorKind::Config));
        }
    };
    let outcome = match cli.command {
        Command::Cp(a) => commands::cp(&a),
        Command::Jennrich(a) => commands::jennrich(&a),
        Command::Tucker(a) => commands::tucker(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Generate(a) => commands::generate(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
