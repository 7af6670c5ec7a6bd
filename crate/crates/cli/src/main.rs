//! `comonotone-vi`: runs, bound checks, certificates and worst-case searches
//! for variational inequalities with negatively comonotone operators.

mod commands;
mod opspec;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use comonotone_core::{Error, Method};

const EXIT_CODES: &str = "\
Exit codes:
  0  success (for certify and interpolate: the check passed)
  1  malformed input or arguments
  2  parameters outside the regime a result requires, or a singular implicit step
  3  divergence, a violated bound, or a failed check
  4  semidefinite solver failure";

const OP_HELP: &str = "\
Operator as name:key=value,... Angles are in radians and numbers may be
written as multiples of pi (pi, -pi/2, 2pi/3, 2*pi/3).
  pp-worst-case:rho=R,gamma=G,N=K   rotation attaining the PP lower bound at horizon K
  neg-scaling:rho=R[,dim=D]         F(x) = -x/R
  rotation:theta=T[,L=S]            F(x) = S * rotation(T) x
  scaling:L=S[,dim=D]               F(x) = S x
  identity[:dim=D]                  F(x) = x
  linear-file:path=FILE             operator JSON {dim, matrix, gain, kind}";

#[derive(Parser)]
#[command(name = "comonotone-vi", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a method on an operator and check the bounds that apply.
    Run(RunArgs),
    /// Evaluate a bound, list the guarantees of a stepsize, or check a saved trace.
    Bounds(BoundsArgs),
    /// Verify a certificate.
    Certify(CertifyArgs),
    /// Check whether input/output pairs are consistent with a comonotone operator.
    Interpolate(InterpolateArgs),
    /// Solve worst-case semidefinite programs for the proximal point method.
    Pep(PepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pp,
    Eg,
    Og,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Pp => Method::Pp,
            MethodArg::Eg => Method::Eg,
            MethodArg::Og => Method::Og,
        }
    }
}

fn number(s: &str) -> Result<f64, String> {
    opspec::parse_number(s).map_err(|e| e.to_string())
}

#[derive(Args, Clone)]
struct StepArgs {
    /// Stepsize for PP, or both stepsizes for EG and OG.
    #[arg(long, value_parser = number)]
    gamma: Option<f64>,
    /// Extrapolation stepsize (EG, OG).
    #[arg(long, value_parser = number)]
    gamma1: Option<f64>,
    /// Update stepsize (EG, OG).
    #[arg(long, value_parser = number)]
    gamma2: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, long_help = OP_HELP)]
    op: String,
    #[command(flatten)]
    steps: StepArgs,
    /// Number of steps.
    #[arg(long = "N", default_value_t = 10)]
    n: usize,
    /// Starting point as comma-separated coordinates [default: first unit vector].
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Known solution [default: origin].
    #[arg(long, allow_hyphen_values = true)]
    reference: Option<String>,
    /// Comonotonicity modulus for the bounds [default: the operator's tightest].
    #[arg(long, value_parser = number)]
    rho: Option<f64>,
    /// Lipschitz constant for the bounds [default: the operator's].
    #[arg(long = "L", value_parser = number)]
    l: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// best-iterate, best-iterate-tilde, last-iterate, last-iterate-refined or
    /// lower-bound. Without it the guarantees of the stepsizes are listed.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, value_parser = number)]
    rho: f64,
    #[arg(long = "L", value_parser = number)]
    l: Option<f64>,
    /// Initial distance to the solution.
    #[arg(long = "R", value_parser = number, default_value = "1")]
    r: f64,
    #[command(flatten)]
    steps: StepArgs,
    #[arg(long = "N", default_value_t = 10)]
    n: usize,
    /// Trace JSON written by `run`; the bound is checked along it.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Solution used to measure R along the trace [default: the trace's own].
    #[arg(long, allow_hyphen_values = true)]
    reference: Option<String>,
    /// Directory for the report JSON and CSV when checking a trace.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(subcommand)]
    target: CertifyTarget,
}

#[derive(Args)]
struct CounterexampleArgs {
    #[arg(long = "L", value_parser = number)]
    l: f64,
    #[arg(long, value_parser = number)]
    gamma1: f64,
    #[arg(long, value_parser = number)]
    gamma2: f64,
}

#[derive(Subcommand)]
enum CertifyTarget {
    /// The matrix inequality behind the OG potential decrease.
    OgMatrix,
    /// Divergence of EG on the scaling or rotation construction.
    EgCounterexample(CounterexampleArgs),
    /// Divergence of OG on the scaling or rotation construction.
    OgCounterexample(CounterexampleArgs),
    /// Negative comonotonicity of a linear operator.
    Comonotone {
        #[arg(long, long_help = OP_HELP)]
        op: String,
        #[arg(long, value_parser = number)]
        rho: f64,
        #[arg(long, default_value_t = comonotone_core::operators::DEFAULT_CERTIFY_TOL)]
        tol: f64,
    },
}

#[derive(Args)]
struct InterpolateArgs {
    /// Dataset JSON {"pairs": [{"x": [...], "g": [...]}], "star_index": ...}.
    #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
    data: Option<PathBuf>,
    /// Trace JSON; its iterates and operator values form the dataset.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_parser = number)]
    rho: f64,
    #[arg(long, default_value_t = comonotone_core::interpolation::DEFAULT_INTERPOLATION_TOL)]
    tol: f64,
    /// Write the dataset shifted to a monotone one, (x, g) -> (x + rho g, g).
    #[arg(long)]
    shift_out: Option<PathBuf>,
}

#[derive(Args)]
struct PepArgs {
    /// Horizons, comma-separated.
    #[arg(long = "N", value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Stepsizes, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = number, required = true)]
    gamma: Vec<f64>,
    #[arg(long, value_parser = number)]
    rho: f64,
    #[arg(long = "R", value_parser = number, default_value = "1")]
    r: f64,
    /// Follow each solve with a minimum-trace solve; its rank and
    /// reconstruction are reported.
    #[arg(long)]
    trace_heuristic: bool,
    /// Compare with the analytic worst case; requires its precondition on N.
    #[arg(long)]
    compare_analytic: bool,
    /// Result JSON for one spec, sweep CSV for several [default: stdout for a sweep].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving one result JSON per spec.
    #[arg(long)]
    json_dir: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, env = "COMONOTONE_VI_JOBS")]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Regime(_) | Error::SingularResolvent { .. } | Error::ResolventNotConverged { .. } => 2,
        Error::Solver(_) | Error::Infeasible(_) | Error::Eigen(_) => 4,
        Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::InvalidParameter(_)
        | Error::MissingReference
        | Error::Inconsistent(_)
        | Error::Parse(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::Certify(a) => commands::certify(a.target),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Pep(a) => commands::pep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
