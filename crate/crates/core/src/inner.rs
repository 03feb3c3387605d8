//! Follower oracle: policy iteration on a single-player LQ problem.
//!
//! With the leader's gain fixed, the follower faces
//! `min_M Tr(X_M Sigma)` where
//! `(a - b M)^T X_M (a - b M) + q + M^T r M = X_M` and `q` may be indefinite.
//! For the minimizing player this is `a = A - B2 L`, `b = B1`,
//! `q = Q - L^T R2 L`, `r = R1`. The maximizing player is handled by negating
//! the value: `a = A - B1 K`, `b = B2`, `q = -Q - K^T R1 K`, `r = R2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameInstance;
use crate::linalg::{self, norm2, solve_checked, Matrix, SymMatrix};

/// Cap on the gradient stepsize; only binds once the gradient is tiny.
pub const ETA_MAX: f64 = 1e3;

/// Single-player LQ problem solved by the follower oracle.
#[derive(Debug, Clone)]
pub struct LqrProblem {
    pub a: Matrix,
    pub b: Matrix,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub sigma: SymMatrix,
}

/// Value, metric and natural gradient at one gain.
#[derive(Debug, Clone)]
pub struct LqrState {
    pub x: SymMatrix,
    pub y: SymMatrix,
    pub cost: f64,
    pub rho: f64,
    /// `r M - b^T X (a - b M)`.
    pub u: Matrix,
}

impl LqrProblem {
    /// The minimizing player's problem for fixed `L`.
    pub fn for_minimizer(g: &GameInstance, l: &Matrix) -> Result<Self> {
        if l.shape() != (g.m2(), g.n()) {
            return Err(Error::Dimension(format!("L has shape {:?}", l.shape())));
        }
        Ok(Self {
            a: g.a() - g.b2() * l,
            b: g.b1().clone(),
            q: SymMatrix::symmetrize(g.q().as_matrix() - l.transpose() * g.r2().as_matrix() * l),
            r: g.r1().clone(),
            sigma: g.sigma().clone(),
        })
    }

    /// The maximizing player's problem for fixed `K`, with the value negated.
    pub fn for_maximizer(g: &GameInstance, k: &Matrix) -> Result<Self> {
        if k.shape() != (g.m1(), g.n()) {
            return Err(Error::Dimension(format!("K has shape {:?}", k.shape())));
        }
        Ok(Self {
            a: g.a() - g.b1() * k,
            b: g.b2().clone(),
            q: SymMatrix::symmetrize(-(g.q().as_matrix() + k.transpose() * g.r1().as_matrix() * k)),
            r: g.r2().clone(),
            sigma: g.sigma().clone(),
        })
    }

    pub fn closed_loop(&self, m: &Matrix) -> Matrix {
        &self.a - &self.b * m
    }

    pub fn is_stabilizable(&self) -> Result<bool> {
        linalg::is_stabilizable(&self.a, &self.b)
    }

    /// Errors with `NotSchur` if `m` does not stabilize `(a, b)`.
    pub fn evaluate(&self, m: &Matrix) -> Result<LqrState> {
        let acl = self.closed_loop(m);
        let rho = linalg::spectral_radius(&acl)?;
        if rho >= 1.0 {
            return Err(Error::NotSchur { rho });
        }
        let w = SymMatrix::symmetrize(self.q.as_matrix() + m.transpose() * self.r.as_matrix() * m);
        let x = linalg::solve_discrete_lyapunov(&acl, &w)?;
        let y = linalg::solve_dual_lyapunov(&acl, &self.sigma)?;
        let cost = (x.as_matrix() * self.sigma.as_matrix()).trace();
        let u = self.r.as_matrix() * m - self.b.transpose() * x.as_matrix() * &acl;
        Ok(LqrState { x, y, cost, rho, u })
    }

    /// `r + b^T X b`.
    pub fn curvature(&self, x: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(self.r.as_matrix() + self.b.transpose() * x.as_matrix() * &self.b)
    }

    /// Residual of this problem's Riccati equation at `x`.
    pub fn riccati_residual(&self, x: &SymMatrix) -> Result<SymMatrix> {
        crate::game::riccati_map(&self.a, &self.b, &self.q, &self.r, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerMethod {
    Gradient,
    NaturalGradient,
    QuasiNewton,
}

/// Outcome of one oracle call. All per-iterate vectors are indexed by
/// iteration and include the starting gain; for a maximizer solve the
/// values are reported in the game's sign convention.
#[derive(Debug, Clone)]
pub struct InnerReport {
    pub k_opt: Matrix,
    pub x_plus: SymMatrix,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub stepsizes: Vec<f64>,
    pub rho_trace: Vec<f64>,
    pub gains: Vec<Matrix>,
    pub values: Vec<SymMatrix>,
    pub costs: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

impl InnerReport {
    fn new(m0: &Matrix) -> Self {
        Self {
            k_opt: m0.clone(),
            x_plus: SymMatrix::zeros(m0.ncols()),
            iterations: 0,
            final_grad_norm: f64::NAN,
            stepsizes: Vec::new(),
            rho_trace: Vec::new(),
            gains: Vec::new(),
            values: Vec::new(),
            costs: Vec::new(),
            grad_norms: Vec::new(),
        }
    }

    fn negate_values(&mut self) {
        self.x_plus = SymMatrix::symmetrize(-self.x_plus.as_matrix());
        for x in &mut self.values {
            *x = SymMatrix::symmetrize(-x.as_matrix());
        }
        for c in &mut self.costs {
            *c = -*c;
        }
    }
}

/// Quantities behind the gradient-method stepsize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStepsize {
    pub mu1: f64,
    pub mu2: f64,
    pub eta0: f64,
    pub beta0: f64,
    pub a1: f64,
    pub a2: f64,
    pub c0: f64,
    pub eta: f64,
}

/// Stepsize for `M <- M - eta * 2 U Y` that keeps the iterate stabilizing.
///
/// `eta0` is half the positive root of `4 mu1 t^2 + 4 mu2 t = 1`, so that
/// `beta0 = 1 / (1 - 4 mu1 eta0^2 - 4 mu2 eta0)` is finite. `c0` is `0.99`
/// times the positive root of `a2 t^2 + a1 t = 1`, with
/// `a = lambda_max(r + b^T X b)`.
pub fn gradient_stepsize(prob: &LqrProblem, _m: &Matrix, state: &LqrState) -> Result<GradientStepsize> {
    let u_norm = norm2(&state.u);
    if u_norm == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    let (sigma_min, _) = linalg::sym_eigen_bounds(&prob.sigma);
    let (_, y_max) = linalg::sym_eigen_bounds(&state.y);
    let y_norm = y_max;
    let buy = norm2(&(&prob.b * &state.u * state.y.as_matrix()));
    let a_norm = norm2(&prob.a);
    let mu1 = y_norm * buy * buy / sigma_min;
    let mu2 = y_norm * buy * a_norm / sigma_min;

    let eta0 = if mu1 > 0.0 {
        // (sqrt(mu1 + mu2^2) - mu2) / (2 mu1), rationalized
        0.5 / (2.0 * ((mu1 + mu2 * mu2).sqrt() + mu2))
    } else {
        f64::INFINITY
    };
    let beta0 = if eta0.is_finite() {
        1.0 / (1.0 - 4.0 * mu1 * eta0 * eta0 - 4.0 * mu2 * eta0)
    } else {
        1.0
    };
    let (_, a) = linalg::sym_eigen_bounds(&prob.curvature(&state.x));
    let a1 = a * beta0 * y_max + 4.0 * u_norm * beta0 * y_max * y_max;
    let a2 = 4.0 * a * u_norm * beta0 * y_max * y_max;
    let c0 = 0.99 * 2.0 / ((4.0 * a2 + a1 * a1).sqrt() + a1);
    let eta = eta0.min(c0).min(ETA_MAX);
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Numerical(format!("gradient stepsize is {eta}")));
    }
    Ok(GradientStepsize { mu1, mu2, eta0, beta0, a1, a2, c0, eta })
}

/// Stabilizing gain for `(A, B)` from value iteration on the auxiliary
/// Riccati equation with unit state and control weights.
pub fn bootstrap_stabilizing_gain(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::Dimension("bootstrap: A must be square and share rows with B".into()));
    }
    if linalg::is_schur(a)? {
        return Ok(Matrix::zeros(m, n));
    }
    if !linalg::is_stabilizable(a, b)? {
        return Err(Error::NotStabilizable { pair: "A, B".into() });
    }
    let eye_m = Matrix::identity(m, m);
    let eye_n = Matrix::identity(n, n);
    let mut x = eye_n.clone();
    for _ in 0..100_000 {
        let btxa = b.transpose() * &x * a;
        let gram = &eye_m + b.transpose() * &x * b;
        let gain = solve_checked(&gram, &btxa, "I + B^T X B")?;
        let next = a.transpose() * &x * a - btxa.transpose() * gain + &eye_n;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &x).norm();
        x = next;
        if change <= 1e-10 * x.norm().max(1.0) {
            let btxa = b.transpose() * &x * a;
            let gram = &eye_m + b.transpose() * &x * b;
            let m0 = solve_checked(&gram, &btxa, "I + B^T X B")?;
            let rho = linalg::spectral_radius(&(a - b * &m0))?;
            if rho >= 1.0 {
                return Err(Error::Numerical(format!(
                    "bootstrap gain is not stabilizing (spectral radius {rho})"
                )));
            }
            return Ok(m0);
        }
    }
    Err(Error::Numerical("bootstrap value iteration did not converge in 100000 steps".into()))
}

/// Accuracy to which `U` can be evaluated in floating point at this iterate.
fn roundoff_floor(prob: &LqrProblem, m: &Matrix, state: &LqrState) -> f64 {
    let scale = prob.r.norm() * m.norm()
        + prob.b.norm() * state.x.norm() * prob.closed_loop(m).norm();
    1e3 * f64::EPSILON * scale
}

/// Runs the chosen policy iteration from `m0` until `||U||_F <= tol`, with
/// `tol` raised to the roundoff level of the current iterate if needed.
pub fn solve_lqr(
    prob: &LqrProblem,
    method: InnerMethod,
    m0: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<InnerReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("inner tolerance must be positive, got {tol}")));
    }
    if m0.shape() != (prob.b.ncols(), prob.a.nrows()) {
        return Err(Error::Dimension(format!("initial gain has shape {:?}", m0.shape())));
    }
    let mut report = InnerReport::new(m0);
    let mut m = m0.clone();
    let mut iteration = 0;
    loop {
        let state = match prob.evaluate(&m) {
            Ok(s) => s,
            Err(Error::NotSchur { rho }) if iteration > 0 => {
                report.iterations = iteration;
                return Err(Error::InnerLeftStableSet {
                    iteration,
                    rho,
                    report: Box::new(report),
                });
            }
            Err(e) => return Err(e),
        };
        let gn = state.u.norm();
        let floor = roundoff_floor(prob, &m, &state);
        report.gains.push(m.clone());
        report.values.push(state.x.clone());
        report.costs.push(state.cost);
        report.rho_trace.push(state.rho);
        report.grad_norms.push(gn);
        report.k_opt = m.clone();
        report.x_plus = state.x.clone();
        report.final_grad_norm = gn;
        report.iterations = iteration;
        if gn <= tol.max(floor) {
            let curv = prob.curvature(&state.x);
            let min_eig = curv.min_eig();
            if !(min_eig > 0.0) {
                return Err(Error::Init(crate::error::InitError::CurvatureNotPositive {
                    what: "r + b^T X b",
                    min_eig,
                }));
            }
            return Ok(report);
        }
        if iteration >= max_iter {
            return Err(Error::InnerNonConvergence { report: Box::new(report) });
        }
        let (eta, step) = match method {
            InnerMethod::NaturalGradient => {
                let (_, lmax) = linalg::sym_eigen_bounds(&prob.curvature(&state.x));
                if !(lmax > 0.0) {
                    return Err(Error::NotPositiveDefinite {
                        what: "r + b^T X b".into(),
                        min_eig: lmax,
                    });
                }
                let eta = 1.0 / (2.0 * lmax);
                (eta, &state.u * (2.0 * eta))
            }
            InnerMethod::QuasiNewton => {
                let curv = prob.curvature(&state.x);
                let dir = solve_checked(curv.as_matrix(), &state.u, "r + b^T X b")?;
                (0.5, dir)
            }
            InnerMethod::Gradient => {
                let s = gradient_stepsize(prob, &m, &state)?;
                (s.eta, &state.u * state.y.as_matrix() * (2.0 * s.eta))
            }
        };
        report.stepsizes.push(eta);
        m -= step;
        iteration += 1;
    }
}

/// Best response of the minimizing player to a fixed `L`.
pub fn inner_solve(
    g: &GameInstance,
    l: &Matrix,
    method: InnerMethod,
    m0: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<InnerReport> {
    solve_lqr(&LqrProblem::for_minimizer(g, l)?, method, m0, tol, max_iter)
}

/// Best response of the maximizing player to a fixed `K`.
///
/// Minimizes the negated value `W = -X`; the report carries `X_plus = -W_plus`
/// and `k_opt` is the maximizing `L`. Also checks `R2 - B2^T X_plus B2 > 0`.
pub fn argmax_l(
    g: &GameInstance,
    k: &Matrix,
    method: InnerMethod,
    l0: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<InnerReport> {
    let prob = LqrProblem::for_maximizer(g, k)?;
    let mut report = match solve_lqr(&prob, method, l0, tol, max_iter) {
        Ok(r) => r,
        Err(Error::InnerNonConvergence { mut report }) => {
            report.negate_values();
            return Err(Error::InnerNonConvergence { report });
        }
        Err(Error::InnerLeftStableSet { iteration, rho, mut report }) => {
            report.negate_values();
            return Err(Error::InnerLeftStableSet { iteration, rho, report });
        }
        Err(e) => return Err(e),
    };
    report.negate_values();
    Ok(report)
}
