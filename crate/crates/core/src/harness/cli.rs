//! `zstar` command line.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure, 4 result computed but flagged untrusted, 1 output could not be
//! written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::{Config, ConfigError};
use super::sweep::{csv_string, run_sweep, SweepError, SweepPlan};
use super::trend::fit_gap_trend;
use crate::contour::{cauchy_radii, quadrature_eval, ContourError, QuadratureSpec, QuadratureStrategy};
use crate::model::{validate, EntropyVariant, ModelError, Problem};
use crate::saddle::{largest_term, solve_newton, solve_scalar, SaddleError};
use crate::series::{exact_sum, PrecisionMode, PrecisionPolicy, SeriesError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_UNTRUSTED: i32 = 4;

/// Stationary-point residual demanded by the `saddle` and `largest-term` commands.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "zstar", version, about = "Truncated partition sums three ways")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML problem document.
    #[arg(long)]
    config: PathBuf,
    /// Override the document's entropy variant.
    #[arg(long)]
    variant: Option<EntropyVariant>,
    /// fast | extended | extended:BITS
    #[arg(long)]
    precision: Option<PrecisionMode>,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SaddleMethod {
    Scalar,
    Newton,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Strategy {
    Auto,
    Grid,
    Factorized,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Direct summation of Z*.
    Exact(Common),
    /// Trapezoidal contour quadrature of Z*.
    Contour {
        #[command(flatten)]
        common: Common,
        /// Nodes per circle (default: smallest count meeting the tail tolerance).
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long, value_enum, default_value_t = Strategy::Auto)]
        strategy: Strategy,
        /// Integrate on unit circles instead of bound-minimizing radii.
        #[arg(long)]
        unit_radii: bool,
    },
    /// Stationary point of the per-site exponent.
    Saddle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SaddleMethod::Scalar)]
        method: SaddleMethod,
    },
    /// Stirling maximum of a single summand (positive couplings only).
    LargestTerm(Common),
    /// Run every method over the document's n_ladder and emit CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Append per-method wall times (makes output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Check a document; structural errors exit 2, regime warnings do not.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Print the canonical document.
        #[arg(long)]
        echo: bool,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_VALIDATION, e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(EXIT_VALIDATION, e)
    }
}

impl From<SeriesError> for Failure {
    fn from(e: SeriesError) -> Self {
        let code = match e {
            SeriesError::Precision(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    }
}

impl From<ContourError> for Failure {
    fn from(e: ContourError) -> Self {
        Failure::new(EXIT_VALIDATION, e)
    }
}

impl From<SaddleError> for Failure {
    fn from(e: SaddleError) -> Self {
        let code = match e {
            SaddleError::Model(_) | SaddleError::UnsupportedBeta => EXIT_VALIDATION,
            _ => EXIT_NUMERICAL,
        };
        Failure::new(code, e)
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        let code = match e {
            SweepError::Io(_) | SweepError::Csv(_) => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    }
}

/// What a command produced: text for the output sink, notes for stderr.
struct Outcome {
    body: String,
    notes: Vec<String>,
    code: i32,
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut config = Config::load(&common.config)?;
    if let Some(v) = common.variant {
        config.variant = v;
    }
    if let Some(p) = common.precision {
        config.precision = p.to_string();
        config.precision_mode()?;
    }
    Ok(config)
}

fn load(common: &Common) -> Result<(Config, Problem<f64>), Failure> {
    let config = load_config(common)?;
    let problem = config.problem()?;
    Ok((config, problem))
}

fn json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result types serialize");
    s.push('\n');
    s
}

fn cmd_exact(common: &Common) -> Result<Outcome, Failure> {
    let (config, problem) = load(common)?;
    let policy = PrecisionPolicy::new(config.precision_mode()?);
    let est = exact_sum(&problem, &policy)?;
    let code = if est.trusted() { EXIT_OK } else { EXIT_UNTRUSTED };
    let notes = est.flags.iter().map(|f| format!("untrusted: {f}")).collect();
    let body = if common.json {
        json(&est)
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "sign = {}", est.sign.as_i8());
        let _ = writeln!(s, "ln|Z*| = {}", est.log_abs);
        match est.per_site {
            Some(v) => {
                let _ = writeln!(s, "(1/N) ln Z* = {v}");
            }
            None => {
                let _ = writeln!(s, "(1/N) ln Z* = undefined (Z* not positive)");
            }
        }
        let _ = writeln!(s, "terms = {}", est.term_count);
        let _ = writeln!(s, "cancellation_index = {:e}", est.cancellation_index);
        let _ = writeln!(s, "precision = {}", est.mode);
        s
    };
    Ok(Outcome { body, notes, code })
}

fn cmd_contour(
    common: &Common,
    nodes: Option<usize>,
    strategy: Strategy,
    unit_radii: bool,
) -> Result<Outcome, Failure> {
    let (_, problem) = load(common)?;
    let mut spec = QuadratureSpec::default().with_strategy(match strategy {
        Strategy::Auto => QuadratureStrategy::Auto,
        Strategy::Grid => QuadratureStrategy::Grid,
        Strategy::Factorized => QuadratureStrategy::Factorized,
    });
    if !unit_radii {
        spec = spec.with_radii(cauchy_radii(&problem)?);
    }
    if let Some(m) = nodes {
        spec = spec.with_nodes(m);
    }
    let q = quadrature_eval(&problem, &spec)?;
    let code = if q.flags.is_empty() { EXIT_OK } else { EXIT_UNTRUSTED };
    let notes = q.flags.iter().map(|f| format!("untrusted: {f:?}")).collect();
    let body = if common.json {
        #[derive(Serialize)]
        struct Report<'a> {
            #[serde(flatten)]
            result: &'a crate::contour::QuadratureResult<f64>,
            per_site: Option<f64>,
        }
        json(&Report {
            result: &q,
            per_site: q.per_site(problem.n_sites),
        })
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "Re Q = {}", q.re);
        let _ = writeln!(s, "Im Q = {:e}", q.im);
        if let Some(v) = q.per_site(problem.n_sites) {
            let _ = writeln!(s, "(1/N) ln Re Q = {v}");
        }
        let _ = writeln!(s, "nodes = {}", q.nodes);
        let _ = writeln!(s, "tail_bound = {:e}", q.tail_bound);
        s
    };
    Ok(Outcome { body, notes, code })
}

fn solution_text(s: &crate::saddle::SaddleSolution<f64>) -> String {
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    let mut out = String::new();
    let _ = writeln!(out, "F* = {}", s.value);
    let _ = writeln!(out, "aggregate = {}", s.aggregate);
    let _ = writeln!(out, "rho = [{}]", list(&s.point.rho));
    let _ = writeln!(out, "z = [{}]", list(&s.point.z));
    let _ = writeln!(out, "residual = {:e}", s.residual_norm);
    out
}

fn cmd_saddle(common: &Common, method: SaddleMethod) -> Result<Outcome, Failure> {
    let (_, problem) = load(common)?;
    let sol = match method {
        SaddleMethod::Scalar => solve_scalar(&problem, SOLVE_TOLERANCE)?,
        SaddleMethod::Newton => solve_newton(&problem, SOLVE_TOLERANCE, None)?,
    };
    let body = if common.json { json(&sol) } else { solution_text(&sol) };
    Ok(Outcome {
        body,
        notes: Vec::new(),
        code: EXIT_OK,
    })
}

fn cmd_largest_term(common: &Common) -> Result<Outcome, Failure> {
    let (_, problem) = load(common)?;
    let sol = largest_term(&problem, SOLVE_TOLERANCE)?;
    let body = if common.json { json(&sol) } else { solution_text(&sol) };
    Ok(Outcome {
        body,
        notes: Vec::new(),
        code: EXIT_OK,
    })
}

fn cmd_sweep(common: &Common, timing: bool) -> Result<Outcome, Failure> {
    let config = load_config(common)?;
    let mut plan = SweepPlan::from_config(&config)?;
    plan.timing = timing;
    plan.output_path = common.out.as_ref().map(|p| p.display().to_string());
    let rows = run_sweep(&plan)?;
    let mut notes = Vec::new();
    let mut code = EXIT_OK;
    for r in &rows {
        for (m, e) in &r.errors {
            notes.push(format!("N = {}: {m} absent: {e}", r.n));
        }
        if r.exact_trusted == Some(false) {
            notes.push(format!("N = {}: untrusted direct sum", r.n));
            code = EXIT_UNTRUSTED;
        }
    }
    let trend = fit_gap_trend(&rows);
    match &trend {
        Ok(t) => notes.push(format!(
            "gap trend: slope = {:e}, R^2 = {:.4}, tail non-increasing = {}, verdict = {:?}",
            t.slope, t.r_squared, t.tail_non_increasing, t.verdict
        )),
        Err(e) => notes.push(format!("gap trend: {e}")),
    }
    let body = if common.json {
        #[derive(Serialize)]
        struct Report<'a> {
            rows: &'a [super::sweep::SweepRow],
            trend: Option<&'a super::trend::GapTrend>,
        }
        json(&Report {
            rows: &rows,
            trend: trend.as_ref().ok(),
        })
    } else {
        csv_string(&rows, timing)
    };
    Ok(Outcome { body, notes, code })
}

fn cmd_validate(common: &Common, echo: bool) -> Result<Outcome, Failure> {
    let (config, problem) = load(common)?;
    let report = validate(&problem)?;
    if let Err(e) = SweepPlan::from_config(&config) {
        return Err(Failure::new(EXIT_VALIDATION, e));
    }
    let notes: Vec<String> = report.warnings.iter().map(|w| format!("warning: {w}")).collect();
    let body = if echo {
        config.to_toml()
    } else if common.json {
        json(&report)
    } else if report.is_clean() {
        "ok\n".to_string()
    } else {
        format!("ok with {} warning(s)\n", report.warnings.len())
    };
    Ok(Outcome {
        body,
        notes,
        code: EXIT_OK,
    })
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let (common, result) = match &cli.command {
        Command::Exact(c) => (c, cmd_exact(c)),
        Command::Contour {
            common,
            nodes,
            strategy,
            unit_radii,
        } => (common, cmd_contour(common, *nodes, *strategy, *unit_radii)),
        Command::Saddle { common, method } => (common, cmd_saddle(common, *method)),
        Command::LargestTerm(c) => (c, cmd_largest_term(c)),
        Command::Sweep { common, timing } => (common, cmd_sweep(common, *timing)),
        Command::Validate { common, echo } => (common, cmd_validate(common, *echo)),
    };
    match result {
        Ok(outcome) => {
            for n in &outcome.notes {
                eprintln!("{n}");
            }
            match &common.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, &outcome.body) {
                        eprintln!("error: cannot write {}: {e}", path.display());
                        return EXIT_IO;
                    }
                }
                None => print!("{}", outcome.body),
            }
            outcome.code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
