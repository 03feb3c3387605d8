//! File formats: instance and policy JSON, solution JSON, trace and rate CSV.
//!
//! Matrices are row-major nested arrays. Floats are written in their
//! shortest round-trip form, so a written instance parses back bit-exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use lqnash_core::diagnostics::NashCertificate;
use lqnash_core::game::GameInstance;
use lqnash_core::linalg::{Matrix, SymMatrix};
use lqnash_core::outer::{Leader, NashSolution, OuterMethod, OuterTrace};

pub const SCHEMA_VERSION: u32 = 1;

/// A malformed input file. The message names the offending field.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct FormatError(pub String);

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub v: u32,
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B1")]
    pub b1: Rows,
    #[serde(rename = "B2")]
    pub b2: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R1")]
    pub r1: Rows,
    #[serde(rename = "R2")]
    pub r2: Rows,
    #[serde(rename = "Sigma")]
    pub sigma: Rows,
}

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows, nrows: usize, ncols: usize, what: &str) -> Result<Matrix, FormatError> {
    if rows.len() != nrows {
        return Err(FormatError(format!("{what}: expected {nrows} rows, found {}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(FormatError(format!(
                "{what}: row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
        if let Some(j) = r.iter().position(|x| !x.is_finite()) {
            return Err(FormatError(format!("{what}: entry ({i}, {j}) is not finite")));
        }
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn sym(rows: &Rows, dim: usize, what: &str) -> Result<SymMatrix, FormatError> {
    SymMatrix::new(from_rows(rows, dim, dim, what)?, what).map_err(|e| FormatError(format!("{what}: {e}")))
}

impl InstanceFile {
    pub fn from_game(g: &GameInstance) -> Self {
        Self {
            v: SCHEMA_VERSION,
            n: g.n(),
            m1: g.m1(),
            m2: g.m2(),
            a: to_rows(g.a()),
            b1: to_rows(g.b1()),
            b2: to_rows(g.b2()),
            q: to_rows(g.q()),
            r1: to_rows(g.r1()),
            r2: to_rows(g.r2()),
            sigma: to_rows(g.sigma()),
        }
    }

    pub fn to_game(&self) -> Result<GameInstance, FormatError> {
        if self.v != SCHEMA_VERSION {
            return Err(FormatError(format!("v: unsupported schema version {}", self.v)));
        }
        let (n, m1, m2) = (self.n, self.m1, self.m2);
        if n == 0 || m1 == 0 || m2 == 0 {
            return Err(FormatError("n, m1, m2 must all be at least 1".into()));
        }
        let a = from_rows(&self.a, n, n, "A")?;
        let b1 = from_rows(&self.b1, n, m1, "B1")?;
        let b2 = from_rows(&self.b2, n, m2, "B2")?;
        let q = sym(&self.q, n, "Q")?;
        let r1 = sym(&self.r1, m1, "R1")?;
        let r2 = sym(&self.r2, m2, "R2")?;
        let sigma = sym(&self.sigma, n, "Sigma")?;
        GameInstance::new(a, b1, b2, q, r1, r2, sigma).map_err(|e| FormatError(e.to_string()))
    }
}

pub fn parse_instance(text: &str) -> Result<GameInstance, FormatError> {
    let file: InstanceFile =
        serde_json::from_str(text).map_err(|e| FormatError(format!("instance JSON: {e}")))?;
    file.to_game()
}

pub fn instance_json(g: &GameInstance) -> String {
    let mut s = serde_json::to_string_pretty(&InstanceFile::from_game(g)).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub v: u32,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "L")]
    pub l: Rows,
}

pub fn parse_policy(text: &str, g: &GameInstance) -> Result<(Matrix, Matrix), FormatError> {
    let file: PolicyFile = serde_json::from_str(text).map_err(|e| FormatError(format!("policy JSON: {e}")))?;
    if file.v != SCHEMA_VERSION {
        return Err(FormatError(format!("v: unsupported schema version {}", file.v)));
    }
    Ok((
        from_rows(&file.k, g.m1(), g.n(), "K")?,
        from_rows(&file.l, g.m2(), g.n(), "L")?,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub v: u32,
    pub method: OuterMethod,
    pub leader: Leader,
    pub rounds: usize,
    #[serde(rename = "K_star")]
    pub k_star: Rows,
    #[serde(rename = "L_star")]
    pub l_star: Rows,
    #[serde(rename = "X_star")]
    pub x_star: Rows,
    pub certificate: CertificateJson,
    pub warnings: Vec<String>,
}

/// Certificate as written to disk; non-finite values become `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateJson {
    pub stationarity_k: Option<f64>,
    pub stationarity_l: Option<f64>,
    pub rho: Option<f64>,
    pub gare_norm: Option<f64>,
    pub assumption: lqnash_core::game::AssumptionStatus,
    pub pass: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&NashCertificate> for CertificateJson {
    fn from(c: &NashCertificate) -> Self {
        Self {
            stationarity_k: finite(c.stationarity_k),
            stationarity_l: finite(c.stationarity_l),
            rho: finite(c.rho),
            gare_norm: finite(c.gare_norm),
            assumption: c.assumption,
            pass: c.pass,
        }
    }
}

pub fn solution_json(sol: &NashSolution) -> String {
    let file = SolutionFile {
        v: SCHEMA_VERSION,
        method: sol.trace.method,
        leader: sol.trace.leader,
        rounds: sol.trace.records.len(),
        k_star: to_rows(&sol.k_star),
        l_star: to_rows(&sol.l_star),
        x_star: to_rows(&sol.x_star),
        certificate: (&sol.certificate).into(),
        warnings: sol.trace.warnings.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("plain data serializes");
    s.push('\n');
    s
}

/// Shortest round-trip decimal for finite values; `NaN`, `inf`, `-inf` otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        serde_json::to_string(&x).expect("finite float serializes")
    }
}

pub const TRACE_HEADER: &str = "j,cost,ng_norm,eta,rho,lambda_min_O,wall_ms";

/// One row per outer round. With `timing == false` the `wall_ms` column is
/// zero so that repeated runs produce identical files.
pub fn trace_csv(trace: &OuterTrace, timing: bool) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let wall = if timing { r.wall_ms } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.j,
            fmt_f64(r.cost),
            fmt_f64(r.ng_norm),
            fmt_f64(r.eta),
            fmt_f64(r.rho),
            fmt_f64(r.lambda_min_o),
            fmt_f64(wall)
        );
    }
    out
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
