//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use lqnash_core::diagnostics::nash_certificate;
use lqnash_core::game::GameInstance;
use lqnash_core::generate::{g1_preset, indefinite_at_ne_instance, random_instance, GeneratorOptions};
use lqnash_core::inner::InnerMethod;
use lqnash_core::outer::{solve_nash, InitPolicy, Leader, NashSolution, OuterMethod, OuterTrace, SolverConfig};
use lqnash_core::rates::{quadratic_fit, tail_slope};
use lqnash_core::Error;

use crate::io::{self, CertificateJson, FormatError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_INIT: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;
pub const EXIT_INVARIANT: u8 = 5;

/// Exit code for a solver error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Init(_) | Error::NotStabilizable { .. } => EXIT_INIT,
        Error::Config(_)
        | Error::Dimension(_)
        | Error::NotFinite { .. }
        | Error::NotSymmetric { .. }
        | Error::NotPositiveDefinite { .. } => EXIT_PARSE,
        e if e.is_invariant_violation() => EXIT_INVARIANT,
        _ => EXIT_NOT_CONVERGED,
    }
}

/// A failure that ends a subcommand with the given exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn parse(msg: impl std::fmt::Display) -> Self {
        Self { code: EXIT_PARSE, message: msg.to_string() }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Self::parse(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    io::write_atomic(path, contents).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

pub fn load_instance(path: &Path) -> Result<GameInstance, Failure> {
    io::parse_instance(&read(path)?).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Ng,
    Qn,
}

impl From<MethodName> for OuterMethod {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Ng => OuterMethod::NaturalGradient,
            MethodName::Qn => OuterMethod::QuasiNewton,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum LeaderName {
    #[value(name = "L")]
    L,
    #[value(name = "K")]
    K,
}

impl From<LeaderName> for Leader {
    fn from(l: LeaderName) -> Self {
        match l {
            LeaderName::L => Leader::PlayerL,
            LeaderName::K => Leader::PlayerK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerName {
    Gradient,
    Ng,
    Qn,
}

impl From<InnerName> for InnerMethod {
    fn from(m: InnerName) -> Self {
        match m {
            InnerName::Gradient => InnerMethod::Gradient,
            InnerName::Ng => InnerMethod::NaturalGradient,
            InnerName::Qn => InnerMethod::QuasiNewton,
        }
    }
}

/// `"zero"`, `"bootstrap"` or an explicit leader gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Named(InitName),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    Zero,
    Bootstrap,
}

/// Solver settings read from a JSON config file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: MethodName,
    pub leader: LeaderName,
    pub init: InitSpec,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_method: InnerName,
    pub aggressive_stepsize: bool,
    pub seed: u64,
    pub inner_tol: f64,
    pub cert_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            method: MethodName::Qn,
            leader: LeaderName::L,
            init: InitSpec::Named(InitName::Zero),
            tol: d.tol,
            max_outer: d.max_outer,
            max_inner: d.max_inner,
            inner_method: InnerName::Qn,
            aggressive_stepsize: d.aggressive,
            seed: 0,
            inner_tol: d.inner_tol,
            cert_tol: d.cert_tol,
        }
    }
}

impl RunConfig {
    pub fn solver_config(&self, g: &GameInstance) -> Result<SolverConfig, Failure> {
        let init = match &self.init {
            InitSpec::Named(InitName::Zero) => InitPolicy::Zero,
            InitSpec::Named(InitName::Bootstrap) => InitPolicy::Bootstrap,
            InitSpec::Matrix(rows) => {
                let r = match self.leader {
                    LeaderName::L => g.m2(),
                    LeaderName::K => g.m1(),
                };
                InitPolicy::Explicit(io::from_rows(rows, r, g.n(), "init")?)
            }
        };
        let cfg = SolverConfig {
            method: self.method.into(),
            leader: self.leader.into(),
            init,
            tol: self.tol,
            max_outer: self.max_outer,
            inner_method: self.inner_method.into(),
            inner_tol: self.inner_tol,
            max_inner: self.max_inner,
            aggressive: self.aggressive_stepsize,
            cert_tol: self.cert_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Solver flags shared by `solve` and `rates`. Flags override the config file.
#[derive(Debug, Args)]
pub struct SolverFlags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub leader: Option<LeaderName>,
    /// `zero`, `bootstrap`, or a path to a JSON file holding the leader gain as nested arrays.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_inner: Option<usize>,
    #[arg(long, value_enum)]
    pub inner_method: Option<InnerName>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub cert_tol: Option<f64>,
    /// Stepsize 1/lambda_max(O) instead of 1/(2 lambda_max(O)).
    #[arg(long)]
    pub aggressive_stepsize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SolverFlags {
    pub fn run_config(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&read(p)?)
                .map_err(|e| Failure::parse(format!("{}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.leader {
            c.leader = v;
        }
        if let Some(v) = &self.init {
            c.init = match v.as_str() {
                "zero" => InitSpec::Named(InitName::Zero),
                "bootstrap" => InitSpec::Named(InitName::Bootstrap),
                path => {
                    let p = Path::new(path);
                    InitSpec::Matrix(
                        serde_json::from_str(&read(p)?)
                            .map_err(|e| Failure::parse(format!("{}: {e}", p.display())))?,
                    )
                }
            };
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(tol, max_outer, max_inner, inner_method, inner_tol, cert_tol, seed);
        c.aggressive_stepsize |= self.aggressive_stepsize;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Directory for solution.json and trace.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Write zeros in the wall_ms column.
    #[arg(long)]
    pub no_timing: bool,
}

fn write_trace(dir: &Path, trace: &OuterTrace, timing: bool) -> Result<(), Failure> {
    write(&dir.join("trace.csv"), &io::trace_csv(trace, timing))
}

pub fn solve(args: &SolveArgs) -> Result<u8, Failure> {
    let g = load_instance(&args.instance)?;
    let mut rc = args.solver.run_config()?;
    if let Some(m) = args.method {
        rc.method = m;
    }
    let cfg = rc.solver_config(&g)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::parse(format!("{}: {e}", args.out_dir.display())))?;
    let timing = !args.no_timing;
    match solve_nash(&g, &cfg) {
        Ok(sol) => {
            write(&args.out_dir.join("solution.json"), &io::solution_json(&sol))?;
            write_trace(&args.out_dir, &sol.trace, timing)?;
            let c = &sol.certificate;
            println!(
                "rounds {} cost {} stationarity {:e}/{:e} gare {:e} certificate {}",
                sol.trace.records.len(),
                io::fmt_f64(sol.trace.records.last().map_or(f64::NAN, |r| r.cost)),
                c.stationarity_k,
                c.stationarity_l,
                c.gare_norm,
                if c.pass { "PASS" } else { "FAIL" }
            );
            Ok(if c.pass { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Err(e) => {
            if let Some(t) = e.trace() {
                write_trace(&args.out_dir, t, timing)?;
            }
            Err(e.into())
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    /// Policy JSON file `{"v": 1, "K": [[...]], "L": [[...]]}`.
    pub policy: PathBuf,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
}

pub fn verify(args: &VerifyArgs) -> Result<u8, Failure> {
    let g = load_instance(&args.instance)?;
    let (k, l) = io::parse_policy(&read(&args.policy)?, &g)
        .map_err(|e| Failure::parse(format!("{}: {e}", args.policy.display())))?;
    if !(args.tol > 0.0 && args.tol.is_finite()) {
        return Err(Failure::parse(format!("tol must be positive, got {}", args.tol)));
    }
    let cert = nash_certificate(&g, &k, &l, args.tol);
    let json: CertificateJson = (&cert).into();
    println!("{}", serde_json::to_string_pretty(&json).expect("plain data serializes"));
    Ok(if cert.pass { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    G1,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2, conflicts_with = "scalar_preset")]
    pub n: usize,
    #[arg(long, default_value_t = 1, conflicts_with = "scalar_preset")]
    pub m1: usize,
    #[arg(long, default_value_t = 1, conflicts_with = "scalar_preset")]
    pub m2: usize,
    #[arg(long, default_value_t = 0, conflicts_with = "scalar_preset")]
    pub seed: u64,
    /// Control weight of the maximizer, R2 = r2 I.
    #[arg(long, default_value_t = 20.0, conflicts_with = "scalar_preset")]
    pub r2: f64,
    /// Only emit instances whose equilibrium has Q - L*^T R2 L* indefinite.
    #[arg(long, conflicts_with = "scalar_preset")]
    pub indefinite_at_ne: bool,
    #[arg(long, value_enum)]
    pub scalar_preset: Option<Preset>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs) -> Result<u8, Failure> {
    let g = match args.scalar_preset {
        Some(Preset::G1) => g1_preset(),
        None => {
            let opts = GeneratorOptions { r2: args.r2, ..GeneratorOptions::new(args.n, args.m1, args.m2, args.seed) };
            if args.indefinite_at_ne {
                indefinite_at_ne_instance(&opts)?
            } else {
                random_instance(&opts)?
            }
        }
    };
    let text = io::instance_json(&g);
    match &args.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ng,qn")]
    pub methods: Vec<MethodName>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, default_value = "rates.csv")]
    pub out: PathBuf,
}

/// Fitted rate diagnostics for one method. Fields are `null` when the run
/// did not produce a certified solution.
#[derive(Debug, Clone, Serialize)]
pub struct RateSummary {
    pub method: MethodName,
    pub converged: bool,
    pub rounds: usize,
    pub tail_slope: Option<f64>,
    pub linear: Option<bool>,
    pub quadratic_q: Option<f64>,
    pub quadratic: Option<bool>,
    pub error: Option<String>,
}

/// Gap threshold below which the quadratic fit starts.
pub const QUADRATIC_THRESHOLD: f64 = 1e-2;
/// Slack on the fitted quadratic constant.
pub const QUADRATIC_SLACK: f64 = 10.0;
/// Rounds used for the tail slope.
pub const TAIL_ROUNDS: usize = 10;

/// `|g* - g_j|` against the final recorded cost.
pub fn cost_errors(trace: &OuterTrace) -> Vec<f64> {
    let last = trace.records.last().map_or(f64::NAN, |r| r.cost);
    trace.records.iter().map(|r| (last - r.cost).abs()).collect()
}

/// Errors at or below this are treated as roundoff.
pub fn error_floor(trace: &OuterTrace) -> f64 {
    let last = trace.records.last().map_or(1.0, |r| r.cost.abs());
    1e-12 * last.max(1.0)
}

fn summarize(method: MethodName, run: &Result<NashSolution, Error>) -> RateSummary {
    let mut s = RateSummary {
        method,
        converged: false,
        rounds: 0,
        tail_slope: None,
        linear: None,
        quadratic_q: None,
        quadratic: None,
        error: None,
    };
    match run {
        Ok(sol) => {
            s.rounds = sol.trace.records.len();
            s.converged = sol.certificate.pass;
            if !s.converged {
                s.error = Some("certificate failed".into());
                return s;
            }
            let e = cost_errors(&sol.trace);
            let floor = error_floor(&sol.trace);
            let body = &e[..e.len().saturating_sub(1)];
            s.tail_slope = tail_slope(body, TAIL_ROUNDS, floor);
            s.linear = s.tail_slope.map(|v| v < 0.0);
            if let Some(fit) = quadratic_fit(body, QUADRATIC_THRESHOLD, QUADRATIC_SLACK, floor) {
                s.quadratic_q = Some(fit.q);
                s.quadratic = Some(fit.holds);
            }
        }
        Err(err) => {
            s.rounds = err.trace().map_or(0, |t| t.records.len());
            s.error = Some(err.to_string());
        }
    }
    s
}

pub fn rates(args: &RatesArgs) -> Result<u8, Failure> {
    let g = load_instance(&args.instance)?;
    let rc = args.solver.run_config()?;
    let mut cfgs = Vec::new();
    for &m in &args.methods {
        let mut c = rc.clone();
        c.method = m;
        cfgs.push((m, c.solver_config(&g)?));
    }
    let runs: Vec<(MethodName, Result<NashSolution, Error>)> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|(m, cfg)| {
                let g = &g;
                (*m, s.spawn(move || solve_nash(g, cfg)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(m, h)| (m, h.join().unwrap_or_else(|_| Err(Error::Numerical("solver thread panicked".into())))))
            .collect()
    });

    let mut csv = String::from("method,j,cost,error,ng_norm\n");
    let mut summaries = Vec::new();
    let mut code = EXIT_OK;
    for (m, run) in &runs {
        let name = match m {
            MethodName::Ng => "ng",
            MethodName::Qn => "qn",
        };
        let summary = summarize(*m, run);
        let trace = match run {
            Ok(sol) => Some(&sol.trace),
            Err(e) => e.trace(),
        };
        if let Some(t) = trace {
            let errs = cost_errors(t);
            for (r, e) in t.records.iter().zip(&errs) {
                let err = if summary.converged { io::fmt_f64(*e) } else { String::new() };
                csv.push_str(&format!("{name},{},{},{err},{}\n", r.j, io::fmt_f64(r.cost), io::fmt_f64(r.ng_norm)));
            }
        }
        let c = match run {
            Ok(_) if summary.converged => EXIT_OK,
            Ok(_) => EXIT_NOT_CONVERGED,
            Err(e) => exit_code(e),
        };
        code = code.max(c);
        summaries.push(summary);
    }
    write(&args.out, &csv)?;
    println!("{}", serde_json::to_string_pretty(&summaries).expect("plain data serializes"));
    Ok(code)
}
