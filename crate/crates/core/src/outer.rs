//! Leader iterations: natural-gradient and quasi-Newton ascent on
//! `g(L) = min_K f(K, L)`, and natural-gradient descent on
//! `h(K) = max_L f(K, L)`.
//!
//! Every round calls the follower oracle, records the closed-loop spectral
//! radius and the curvature `O`, and checks the run invariants: the pair
//! stays stabilizing, `O` stays positive definite and the value matrix is
//! monotone. No iterate is ever projected back onto the stabilizing set.
//!
//! The K-leader iteration is run as the L-leader iteration on the mirrored
//! game (players exchanged, cost negated), whose curvature matrix is the
//! K-leader curvature of the original game. Traces are mapped back to the
//! original sign convention.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{nash_certificate, NashCertificate};
use crate::error::{Error, InitError, Result};
use crate::game::{self, GameInstance, PolicyPair};
use crate::inner::{bootstrap_stabilizing_gain, solve_lqr, InnerMethod, InnerReport, LqrProblem};
use crate::linalg::{self, inverse_checked, Matrix, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterMethod {
    NaturalGradient,
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leader {
    PlayerL,
    PlayerK,
}

/// How the leader's first gain is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    Zero,
    /// A gain stabilizing `(A, B_leader)` from value iteration.
    Bootstrap,
    Explicit(Matrix),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: OuterMethod,
    pub leader: Leader,
    pub init: InitPolicy,
    /// Stop once the leader's natural-gradient norm `||2V||_F` (or `||2U||_F`) is below this.
    pub tol: f64,
    pub max_outer: usize,
    pub inner_method: InnerMethod,
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Use `eta = 1 / lambda_max(O)` instead of `1 / (2 lambda_max(O))`.
    pub aggressive: bool,
    /// Tolerance handed to the Nash certificate.
    pub cert_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: OuterMethod::QuasiNewton,
            leader: Leader::PlayerL,
            init: InitPolicy::Zero,
            tol: 1e-8,
            max_outer: 500,
            inner_method: InnerMethod::QuasiNewton,
            inner_tol: 1e-12,
            max_inner: 10_000,
            aggressive: false,
            cert_tol: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == OuterMethod::QuasiNewton && self.leader == Leader::PlayerK {
            return Err(Error::Config(
                "quasi-Newton outer iteration is only available with L as the leader".into(),
            ));
        }
        for (name, v) in [("tol", self.tol), ("inner_tol", self.inner_tol), ("cert_tol", self.cert_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_inner == 0 {
            return Err(Error::Config("max_inner must be at least 1".into()));
        }
        Ok(())
    }
}

/// One outer round, in the original game's sign convention.
#[derive(Debug, Clone)]
pub struct OuterRecord {
    pub j: usize,
    pub leader_gain: Matrix,
    pub follower_gain: Matrix,
    pub x: SymMatrix,
    pub cost: f64,
    /// `||2V||_F` for the L-leader, `||2U||_F` for the K-leader.
    pub ng_norm: f64,
    /// Stepsize applied after this round; zero on the final round.
    pub eta: f64,
    pub rho: f64,
    pub lambda_min_o: f64,
    pub lambda_max_o: f64,
    pub inner_iterations: usize,
    pub inner_rho_max: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct OuterTrace {
    pub method: OuterMethod,
    pub leader: Leader,
    pub aggressive: bool,
    pub records: Vec<OuterRecord>,
    pub warnings: Vec<String>,
}

impl OuterTrace {
    fn new(method: OuterMethod, leader: Leader, aggressive: bool) -> Self {
        Self {
            method,
            leader,
            aggressive,
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn mirror_back(&mut self) {
        self.leader = Leader::PlayerK;
        for r in &mut self.records {
            r.x = SymMatrix::symmetrize(-r.x.as_matrix());
            r.cost = -r.cost;
        }
    }
}

#[derive(Debug, Clone)]
pub struct NashSolution {
    pub k_star: Matrix,
    pub l_star: Matrix,
    pub x_star: SymMatrix,
    pub certificate: NashCertificate,
    pub trace: OuterTrace,
}

/// Validated starting point: the follower's best response to the leader's
/// initial gain.
#[derive(Debug, Clone)]
pub struct InitContext {
    pub leader_gain: Matrix,
    pub follower_gain: Matrix,
    pub x_plus: SymMatrix,
    pub report: InnerReport,
}

fn validate_leader(
    g: &GameInstance,
    l0: &Matrix,
    inner_method: InnerMethod,
    inner_tol: f64,
    max_inner: usize,
    pair: &'static str,
    curvature: &'static str,
) -> Result<InitContext> {
    let prob = LqrProblem::for_minimizer(g, l0)?;
    if !prob.is_stabilizable()? {
        return Err(InitError::NotStabilizable { pair }.into());
    }
    let m0 = bootstrap_stabilizing_gain(&prob.a, &prob.b).map_err(|e| InitError::DareNotSolvable {
        reason: format!("no stabilizing follower gain: {e}"),
    })?;
    let report = match solve_lqr(&prob, inner_method, &m0, inner_tol, max_inner) {
        Ok(r) => r,
        Err(Error::Init(InitError::CurvatureNotPositive { min_eig, .. })) => {
            return Err(InitError::CurvatureNotPositive { what: curvature, min_eig }.into())
        }
        Err(e) => return Err(InitError::DareNotSolvable { reason: e.to_string() }.into()),
    };
    let residual = prob.riccati_residual(&report.x_plus).map(|r| r.norm()).unwrap_or(f64::INFINITY);
    let scale = report.x_plus.norm().max(1.0);
    if !(residual <= 1e-6 * scale) {
        return Err(InitError::DareNotSolvable {
            reason: format!("follower Riccati residual {residual:e} at the oracle's answer"),
        }
        .into());
    }
    let min_eig = prob.curvature(&report.x_plus).min_eig();
    if !(min_eig > game::DEFINITENESS_MARGIN) {
        return Err(InitError::CurvatureNotPositive { what: curvature, min_eig }.into());
    }
    // The run invariants must already hold in round 0, including O > 0.
    let min_eig = game::o_matrix(g, &report.x_plus).map(|o| o.min_eig()).unwrap_or(f64::NAN);
    if !(min_eig > 0.0) {
        return Err(InitError::CurvatureNotPositive { what: "leader curvature O", min_eig }.into());
    }
    Ok(InitContext {
        leader_gain: l0.clone(),
        follower_gain: report.k_opt.clone(),
        x_plus: report.x_plus.clone(),
        report,
    })
}

/// Checks that `L0` is a valid start for the L-leader iterations:
/// `(A - B2 L0, B1)` stabilizable, the follower Riccati equation solvable by
/// the oracle, `R1 + B1^T X+ B1 > 0`, and `O > 0` at `X+`.
pub fn validate_init_l(g: &GameInstance, l0: &Matrix, cfg: &SolverConfig) -> Result<InitContext> {
    validate_leader(
        g,
        l0,
        cfg.inner_method,
        cfg.inner_tol,
        cfg.max_inner,
        "A - B2 L0, B1",
        "R1 + B1^T X+ B1",
    )
}

/// Checks that `K0` is a valid start for the K-leader iteration:
/// `(A - B1 K0, B2)` stabilizable, the maximizer's Riccati equation solvable
/// `R2 - B2^T X+ B2 > 0` and `O_K > 0`. The returned `x_plus` is in the game's sign.
pub fn validate_init_k(g: &GameInstance, k0: &Matrix, cfg: &SolverConfig) -> Result<InitContext> {
    let mut ctx = validate_leader(
        &g.mirrored(),
        k0,
        cfg.inner_method,
        cfg.inner_tol,
        cfg.max_inner,
        "A - B1 K0, B2",
        "R2 - B2^T X+ B2",
    )?;
    ctx.x_plus = SymMatrix::symmetrize(-ctx.x_plus.as_matrix());
    Ok(ctx)
}

fn invariant(round: usize, detail: String, trace: &OuterTrace) -> Error {
    Error::InvariantViolation {
        round,
        detail,
        trace: Box::new(trace.clone()),
    }
}

/// Shared L-leader loop. `quasi_newton` selects the direction `O^{-1} 2V`
/// with `eta = 1/2` over `2V` with `eta = 1/(2 lambda_max(O))`.
fn leader_l_loop(
    g: &GameInstance,
    ctx: InitContext,
    cfg: &SolverConfig,
    quasi_newton: bool,
    mut trace: OuterTrace,
) -> Result<(PolicyPair, SymMatrix, OuterTrace)> {
    let start = Instant::now();
    let mut l = ctx.leader_gain;
    let mut report = ctx.report;
    let mut prev_x: Option<SymMatrix> = None;
    let mut j = 0usize;
    loop {
        let k = report.k_opt.clone();
        let x = report.x_plus.clone();
        let pair = PolicyPair::new(k.clone(), l.clone());
        let rho = game::closed_loop_radius(g, &pair)?;
        let (_, v) = game::natural_gradients(g, &pair, &x)?;
        let ng_norm = 2.0 * v.norm();
        let cost = (x.as_matrix() * g.sigma().as_matrix()).trace();
        let o = game::o_matrix(g, &x);
        let (lmin_o, lmax_o) = match &o {
            Ok(o) => linalg::sym_eigen_bounds(o),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let inner_rho_max = report.rho_trace.iter().copied().fold(0.0, f64::max);
        trace.records.push(OuterRecord {
            j,
            leader_gain: l.clone(),
            follower_gain: k.clone(),
            x: x.clone(),
            cost,
            ng_norm,
            eta: 0.0,
            rho,
            lambda_min_o: lmin_o,
            lambda_max_o: lmax_o,
            inner_iterations: report.iterations,
            inner_rho_max,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        log::debug!("round {j}: cost {cost:.12e} |2V| {ng_norm:.3e} rho {rho:.6} lmin(O) {lmin_o:.3e}");

        if !(rho < 1.0) || !(inner_rho_max < 1.0) {
            return Err(invariant(
                j,
                format!("closed loop left the stabilizing set (rho {rho}, inner max {inner_rho_max})"),
                &trace,
            ));
        }
        if let Some(px) = &prev_x {
            let diff = SymMatrix::symmetrize(x.as_matrix() - px.as_matrix());
            let slack = 1e-10 * x.norm().max(px.norm()).max(1.0);
            let lmin = diff.min_eig();
            if lmin < -slack {
                return Err(invariant(
                    j,
                    format!("value matrix decreased (lambda_min(X_j - X_j-1) = {lmin:e})"),
                    &trace,
                ));
            }
        }
        if ng_norm <= cfg.tol {
            return Ok((pair, x, trace));
        }
        let o = match o {
            Ok(o) => o,
            Err(e) => {
                return Err(invariant(j, format!("curvature matrix unavailable: {e}"), &trace));
            }
        };
        if !(lmin_o > 0.0) {
            return Err(invariant(
                j,
                format!("curvature matrix O is not positive definite (lambda_min {lmin_o:e})"),
                &trace,
            ));
        }
        if j >= cfg.max_outer {
            return Err(Error::OuterNonConvergence { trace: Box::new(trace) });
        }

        let (eta, step) = if quasi_newton {
            let o_inv = match inverse_checked(o.as_matrix(), "O") {
                Ok(m) => m,
                Err(e) => return Err(invariant(j, e.to_string(), &trace)),
            };
            (0.5, o_inv * &v)
        } else {
            let eta = if cfg.aggressive { 1.0 / lmax_o } else { 1.0 / (2.0 * lmax_o) };
            (eta, v.clone() * (2.0 * eta))
        };
        trace.records.last_mut().expect("record pushed above").eta = eta;
        l += step;
        j += 1;

        let inner_tol = cfg
            .inner_tol
            .min(0.01 * v.norm())
            .max(1e-13 * x.norm().max(1.0));
        let prob = LqrProblem::for_minimizer(g, &l)?;
        let warm = if linalg::spectral_radius(&prob.closed_loop(&k))? < 1.0 {
            k
        } else {
            match bootstrap_stabilizing_gain(&prob.a, &prob.b) {
                Ok(m) => m,
                Err(e) => {
                    return Err(Error::Oracle {
                        round: j,
                        source: Box::new(e),
                        trace: Box::new(trace),
                    })
                }
            }
        };
        report = match solve_lqr(&prob, cfg.inner_method, &warm, inner_tol, cfg.max_inner) {
            Ok(r) => r,
            Err(e) => {
                return Err(Error::Oracle {
                    round: j,
                    source: Box::new(e),
                    trace: Box::new(trace),
                })
            }
        };
        prev_x = Some(x);
    }
}

fn finish(
    g: &GameInstance,
    pair: PolicyPair,
    x: SymMatrix,
    trace: OuterTrace,
    cfg: &SolverConfig,
) -> NashSolution {
    let certificate = nash_certificate(g, &pair.k, &pair.l, cfg.cert_tol);
    NashSolution {
        k_star: pair.k,
        l_star: pair.l,
        x_star: x,
        certificate,
        trace,
    }
}

/// Natural-gradient ascent on `g(L)` from `L0`:
/// `L <- L + eta 2V` with `eta = 1/(2 lambda_max(O))`.
///
/// Returns a solution even if its certificate fails; callers inspect
/// `certificate.pass`.
pub fn ng_outer(g: &GameInstance, l0: &Matrix, cfg: &SolverConfig) -> Result<NashSolution> {
    let ctx = validate_init_l(g, l0, cfg)?;
    let trace = OuterTrace::new(OuterMethod::NaturalGradient, Leader::PlayerL, cfg.aggressive);
    let (pair, x, trace) = leader_l_loop(g, ctx, cfg, false, trace)?;
    Ok(finish(g, pair, x, trace, cfg))
}

/// Quasi-Newton ascent on `g(L)` from `L0`: `L <- L + (1/2) O^{-1} 2V`.
pub fn qn_outer(g: &GameInstance, l0: &Matrix, cfg: &SolverConfig) -> Result<NashSolution> {
    let ctx = validate_init_l(g, l0, cfg)?;
    let mut trace = OuterTrace::new(OuterMethod::QuasiNewton, Leader::PlayerL, cfg.aggressive);
    let weight = SymMatrix::symmetrize(
        g.q().as_matrix() - l0.transpose() * g.r2().as_matrix() * l0,
    );
    let a0 = g.a() - g.b2() * l0;
    if !linalg::is_detectable(weight.as_matrix(), &a0)? {
        let msg = "(Q - L0^T R2 L0, A - B2 L0) is not detectable".to_string();
        log::warn!("{msg}");
        trace.warnings.push(msg);
    }
    let (pair, x, trace) = leader_l_loop(g, ctx, cfg, true, trace)?;
    Ok(finish(g, pair, x, trace, cfg))
}

/// Natural-gradient descent on `h(K) = max_L f(K, L)` from `K0`:
/// `K <- K - eta 2U` with `eta = 1/(2 lambda_max(O_K))` and
/// `O_K = R1 + B1^T X B1 + B1^T X B2 (R2 - B2^T X B2)^{-1} B2^T X B1`.
pub fn ng_outer_leader_k(g: &GameInstance, k0: &Matrix, cfg: &SolverConfig) -> Result<NashSolution> {
    let mirror = g.mirrored();
    let ctx = validate_leader(
        &mirror,
        k0,
        cfg.inner_method,
        cfg.inner_tol,
        cfg.max_inner,
        "A - B1 K0, B2",
        "R2 - B2^T X+ B2",
    )?;
    let trace = OuterTrace::new(OuterMethod::NaturalGradient, Leader::PlayerK, cfg.aggressive);
    let (pair, x, mut trace) = leader_l_loop(&mirror, ctx, cfg, false, trace).map_err(mirror_error)?;
    trace.mirror_back();
    let pair = PolicyPair::new(pair.l, pair.k);
    let x = SymMatrix::symmetrize(-x.as_matrix());
    Ok(finish(g, pair, x, trace, cfg))
}

fn mirror_error(e: Error) -> Error {
    match e {
        Error::OuterNonConvergence { mut trace } => {
            trace.mirror_back();
            Error::OuterNonConvergence { trace }
        }
        Error::Oracle { round, source, mut trace } => {
            trace.mirror_back();
            Error::Oracle { round, source, trace }
        }
        Error::InvariantViolation { round, detail, mut trace } => {
            trace.mirror_back();
            Error::InvariantViolation { round, detail, trace }
        }
        other => other,
    }
}

/// Resolves the initial leader gain named by the config.
pub fn initial_leader_gain(g: &GameInstance, cfg: &SolverConfig) -> Result<Matrix> {
    let (rows, b) = match cfg.leader {
        Leader::PlayerL => (g.m2(), g.b2()),
        Leader::PlayerK => (g.m1(), g.b1()),
    };
    match &cfg.init {
        InitPolicy::Zero => Ok(Matrix::zeros(rows, g.n())),
        InitPolicy::Bootstrap => bootstrap_stabilizing_gain(g.a(), b).map_err(|e| match e {
            Error::NotStabilizable { .. } => InitError::NotStabilizable {
                pair: match cfg.leader {
                    Leader::PlayerL => "A, B2",
                    Leader::PlayerK => "A, B1",
                },
            }
            .into(),
            other => other,
        }),
        InitPolicy::Explicit(m) => {
            if m.shape() != (rows, g.n()) {
                return Err(Error::Config(format!(
                    "initial leader gain has shape {:?}, expected ({rows}, {})",
                    m.shape(),
                    g.n()
                )));
            }
            Ok(m.clone())
        }
    }
}

/// Validates the config and the instance, then dispatches to the chosen
/// iteration.
pub fn solve_nash(g: &GameInstance, cfg: &SolverConfig) -> Result<NashSolution> {
    cfg.validate()?;
    if !linalg::is_stabilizable(g.a(), &g.b_joint())? {
        return Err(InitError::NotStabilizable { pair: "A, [B1 B2]" }.into());
    }
    let init = initial_leader_gain(g, cfg)?;
    log::info!(
        "solving n={} m1={} m2={} with {:?}, leader {:?}",
        g.n(),
        g.m1(),
        g.m2(),
        cfg.method,
        cfg.leader
    );
    let sol = match (cfg.method, cfg.leader) {
        (OuterMethod::NaturalGradient, Leader::PlayerL) => ng_outer(g, &init, cfg),
        (OuterMethod::QuasiNewton, Leader::PlayerL) => qn_outer(g, &init, cfg),
        (OuterMethod::NaturalGradient, Leader::PlayerK) => ng_outer_leader_k(g, &init, cfg),
        (OuterMethod::QuasiNewton, Leader::PlayerK) => unreachable!("rejected by validate"),
    }?;
    log::info!(
        "finished after {} rounds, certificate {}",
        sol.trace.records.len(),
        if sol.certificate.pass { "pass" } else { "fail" }
    );
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn g1() -> GameInstance {
        GameInstance::new(
            dmatrix![1.2],
            dmatrix![1.0],
            dmatrix![0.5],
            SymMatrix::identity(1),
            SymMatrix::identity(1),
            SymMatrix::new(dmatrix![5.0], "R2").unwrap(),
            SymMatrix::identity(1),
        )
        .unwrap()
    }

    /// Root of `4.75 x^2 - 6.95 x - 5 = 0`, the scalar GARE for G1.
    fn g1_value() -> f64 {
        (6.95 + (6.95f64 * 6.95 + 4.0 * 4.75 * 5.0).sqrt()) / (2.0 * 4.75)
    }

    #[test]
    fn qn_plus_k_leader_rejected() {
        let cfg = SolverConfig {
            leader: Leader::PlayerK,
            method: OuterMethod::QuasiNewton,
            ..Default::default()
        };
        assert!(matches!(solve_nash(&g1(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn all_drivers_reach_g1_value() {
        let x = g1_value();
        for (method, leader) in [
            (OuterMethod::NaturalGradient, Leader::PlayerL),
            (OuterMethod::QuasiNewton, Leader::PlayerL),
            (OuterMethod::NaturalGradient, Leader::PlayerK),
        ] {
            // L0 = 0 is valid for the L-leader; for the K-leader K0 = 0 leaves
            // max_L f unbounded, while the bootstrap gain lies in its domain.
            let init = match leader {
                Leader::PlayerL => InitPolicy::Zero,
                Leader::PlayerK => InitPolicy::Bootstrap,
            };
            let cfg = SolverConfig { method, leader, init, ..Default::default() };
            let sol = solve_nash(&g1(), &cfg).unwrap();
            assert!((sol.x_star[(0, 0)] - x).abs() < 1e-7, "{method:?} {leader:?}");
            assert!(sol.certificate.pass, "{method:?} {leader:?}");
        }
    }

    #[test]
    fn start_at_nash_stops_in_first_round() {
        let g = g1();
        let x = SymMatrix::new(dmatrix![g1_value()], "X").unwrap();
        let p = game::policies_from_value(&g, &x).unwrap();
        let sol = qn_outer(&g, &p.l, &SolverConfig::default()).unwrap();
        assert_eq!(sol.trace.records.len(), 1);
        let sol = ng_outer_leader_k(&g, &p.k, &SolverConfig { method: OuterMethod::NaturalGradient, ..Default::default() }).unwrap();
        assert_eq!(sol.trace.records.len(), 1);
    }

    #[test]
    fn unstabilizable_follower_pair_is_named() {
        // B1 = 0 and A - B2 L0 unstable
        let g = GameInstance::new(
            dmatrix![1.5],
            dmatrix![0.0],
            dmatrix![1.0],
            SymMatrix::identity(1),
            SymMatrix::identity(1),
            SymMatrix::identity(1),
            SymMatrix::identity(1),
        )
        .unwrap();
        let err = validate_init_l(&g, &dmatrix![0.0], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Init(InitError::NotStabilizable { .. })));
    }

    #[test]
    fn zero_start_is_valid_for_stable_psd_instance() {
        let g = GameInstance::new(
            dmatrix![0.5, 0.1; 0.0, 0.3],
            dmatrix![1.0; 0.0],
            dmatrix![0.0; 1.0],
            SymMatrix::identity(2),
            SymMatrix::identity(1),
            SymMatrix::new(dmatrix![4.0], "R2").unwrap(),
            SymMatrix::identity(2),
        )
        .unwrap();
        assert!(validate_init_l(&g, &Matrix::zeros(1, 2), &SolverConfig::default()).is_ok());
    }

    #[test]
    fn trace_is_monotone_and_stable() {
        let cfg = SolverConfig { method: OuterMethod::NaturalGradient, ..Default::default() };
        let sol = ng_outer(&g1(), &dmatrix![0.0], &cfg).unwrap();
        for w in sol.trace.records.windows(2) {
            assert!(w[1].x[(0, 0)] >= w[0].x[(0, 0)] - 1e-10);
        }
        assert!(sol.trace.records.iter().all(|r| r.rho < 1.0 && r.lambda_min_o > 0.0));
    }
}
