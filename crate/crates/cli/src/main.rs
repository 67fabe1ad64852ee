//! `bno`: dataset generation, training, evaluation and solving for learned
//! boundary operators.

mod commands;
mod config;
mod interp;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "bno", version, about = "Learned boundary operators for elliptic PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of boundary traces.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Fit an operator to a dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score a model on analytic test families.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Solve one problem from boundary data files.
    #[command(args_override_self = true)]
    Solve(SolveArgs),
    /// Log-kernel integral benchmark on the unit square.
    #[command(args_override_self = true)]
    Quadbench(QuadbenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Laplace,
    Helmholtz,
    Helmholtz3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adam,
    Ls,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = Equation::Laplace)]
    pub equation: Equation,
    /// Wavenumber for Helmholtz equations.
    #[arg(long)]
    pub k: Option<f64>,
    /// `square`, `disk`, `sphere`, or a JSON domain file.
    #[arg(long, default_value = "square")]
    pub domain: String,
    /// Boundary points.
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub kernels_per_sample: usize,
    /// Sources are drawn from `[-w, w]^d`.
    #[arg(long, default_value_t = 7.0)]
    pub source_half_width: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub min_distance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Adam)]
    pub method: Method,
    #[arg(long, default_value_t = 10_000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden widths of a stacked linear network.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Keep the last weights instead of the best epoch.
    #[arg(long)]
    pub no_checkpoint: bool,
    /// Square edges carrying Dirichlet data; trains a mixed operator.
    #[arg(long, value_delimiter = ',')]
    pub dirichlet_segments: Vec<u8>,
    /// Model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `laplace`, `helmholtz`, `poisson`, `plane-wave-3d`, `laplace-u1..u5`,
    /// or comma-separated family names. Defaults by model kernel.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub cases: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Evaluation grid is `grid_n × grid_n` over the bounding box.
    #[arg(long, default_value_t = 100)]
    pub grid_n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Mesh size for Poisson cases on the unit square.
    #[arg(long, default_value_t = 0.02)]
    pub mesh_h: f64,
    /// MSH mesh for Poisson cases.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub r0: f64,
    /// Skip per-case field CSVs.
    #[arg(long)]
    pub no_fields: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dirichlet data, one value per boundary point in grid order.
    #[arg(long)]
    pub g: PathBuf,
    /// Neumann data for mixed models; only values on Neumann edges are used.
    #[arg(long)]
    pub h: Option<PathBuf>,
    /// Source term values at mesh vertices, one per line (Poisson).
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub mesh_h: f64,
    /// Boundary grid, e.g. `square400`; must agree with the model.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub grid_n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.01)]
    pub r0: f64,
    /// Field CSV (traces CSV for surface models).
    #[arg(long)]
    pub out: PathBuf,
    /// Full boundary traces `x,y,g,h`.
    #[arg(long)]
    pub traces_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct QuadbenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02")]
    pub h: Vec<f64>,
    /// Integrand name; all benchmark integrands when omitted.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub r0: f64,
    #[arg(long, default_value_t = 64)]
    pub angles: usize,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Solve(a) => commands::solve(a),
        Command::Quadbench(a) => commands::quadbench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
