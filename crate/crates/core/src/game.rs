//! Zero-sum LQ game data and the closed-form quantities built on it.
//!
//! Dynamics are `x+ = A x - B1 u1 - B2 u2` with `u1 = K x` (minimizer) and
//! `u2 = L x` (maximizer). For an admissible pair the cost is
//! `f(K, L) = Tr(X Sigma)` where
//!
//! ```text
//! A_KL^T X A_KL + Q + K^T R1 K - L^T R2 L = X,    A_KL = A - B1 K - B2 L
//! A_KL Y A_KL^T + Sigma = Y
//! ```
//!
//! and the gradients are `grad_K f = 2 U Y`, `grad_L f = 2 V Y` with
//! `U = R1 K - B1^T X A_KL` and `V = -R2 L - B2^T X A_KL` (the natural
//! gradients). The factor two is confirmed against central differences in
//! the tests below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_finite, solve_checked, Matrix, SymMatrix};

/// Definiteness margin used by the assumption checks.
pub const DEFINITENESS_MARGIN: f64 = 1e-10;

/// Problem data for a zero-sum LQ game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    a: Matrix,
    b1: Matrix,
    b2: Matrix,
    q: SymMatrix,
    r1: SymMatrix,
    r2: SymMatrix,
    sigma: SymMatrix,
}

impl GameInstance {
    /// Validates dimensions, finiteness, `R1, R2, Sigma > 0`. `Q` may be
    /// indefinite. Stabilizability of `(A, [B1 B2])` is a separate check,
    /// see [`GameInstance::check_stabilizable`].
    pub fn new(
        a: Matrix,
        b1: Matrix,
        b2: Matrix,
        q: SymMatrix,
        r1: SymMatrix,
        r2: SymMatrix,
        sigma: SymMatrix,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::Dimension(format!("A must be square, got {}x{}", n, a.ncols())));
        }
        if n == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        if b1.nrows() != n || b2.nrows() != n {
            return Err(Error::Dimension(format!(
                "B1 ({}x{}) and B2 ({}x{}) must have {n} rows",
                b1.nrows(),
                b1.ncols(),
                b2.nrows(),
                b2.ncols()
            )));
        }
        let (m1, m2) = (b1.ncols(), b2.ncols());
        for (what, dim, want) in [
            ("Q", q.dim(), n),
            ("R1", r1.dim(), m1),
            ("R2", r2.dim(), m2),
            ("Sigma", sigma.dim(), n),
        ] {
            if dim != want {
                return Err(Error::Dimension(format!("{what} must be {want}x{want}, got {dim}x{dim}")));
            }
        }
        check_finite(&a, "A")?;
        check_finite(&b1, "B1")?;
        check_finite(&b2, "B2")?;
        for (what, m) in [("R1", &r1), ("R2", &r2), ("Sigma", &sigma)] {
            let min_eig = m.min_eig();
            if !(min_eig > 1e-12) {
                return Err(Error::NotPositiveDefinite {
                    what: what.to_string(),
                    min_eig,
                });
            }
        }
        Ok(Self { a, b1, b2, q, r1, r2, sigma })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b1(&self) -> &Matrix {
        &self.b1
    }
    pub fn b2(&self) -> &Matrix {
        &self.b2
    }
    pub fn q(&self) -> &SymMatrix {
        &self.q
    }
    pub fn r1(&self) -> &SymMatrix {
        &self.r1
    }
    pub fn r2(&self) -> &SymMatrix {
        &self.r2
    }
    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m1(&self) -> usize {
        self.b1.ncols()
    }
    pub fn m2(&self) -> usize {
        self.b2.ncols()
    }

    /// `[B1 B2]`.
    pub fn b_joint(&self) -> Matrix {
        let n = self.n();
        let mut b = Matrix::zeros(n, self.m1() + self.m2());
        b.view_mut((0, 0), (n, self.m1())).copy_from(&self.b1);
        b.view_mut((0, self.m1()), (n, self.m2())).copy_from(&self.b2);
        b
    }

    /// Errors unless `(A, [B1 B2])` is stabilizable.
    pub fn check_stabilizable(&self) -> Result<()> {
        if linalg::is_stabilizable(&self.a, &self.b_joint())? {
            Ok(())
        } else {
            Err(Error::NotStabilizable {
                pair: "A, [B1 B2]".into(),
            })
        }
    }

    /// The game with the players' roles exchanged and the cost negated:
    /// `(A, B2, B1, -Q, R2, R1, Sigma)`. Its value matrix at `(L, K)` is
    /// `-X(K, L)`, and condition (a1) for it is condition (a2) here.
    pub fn mirrored(&self) -> Self {
        Self {
            a: self.a.clone(),
            b1: self.b2.clone(),
            b2: self.b1.clone(),
            q: SymMatrix::symmetrize(-self.q.as_matrix()),
            r1: self.r2.clone(),
            r2: self.r1.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

/// Feedback gains of both players.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub k: Matrix,
    pub l: Matrix,
}

impl PolicyPair {
    pub fn new(k: Matrix, l: Matrix) -> Self {
        Self { k, l }
    }

    pub fn zeros(g: &GameInstance) -> Self {
        Self {
            k: Matrix::zeros(g.m1(), g.n()),
            l: Matrix::zeros(g.m2(), g.n()),
        }
    }
}

/// Value matrix `X`, metric matrix `Y` and cost `Tr(X Sigma)` of an
/// admissible pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCertificate {
    pub x: SymMatrix,
    pub y: SymMatrix,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad_k: Matrix,
    pub grad_l: Matrix,
    /// Natural gradient in `K`: `R1 K - B1^T X A_KL`.
    pub u: Matrix,
    /// Natural gradient in `L`: `-R2 L - B2^T X A_KL`.
    pub v: Matrix,
}

fn check_policy_dims(g: &GameInstance, p: &PolicyPair) -> Result<()> {
    let n = g.n();
    if p.k.shape() != (g.m1(), n) || p.l.shape() != (g.m2(), n) {
        return Err(Error::Dimension(format!(
            "policy shapes K {:?}, L {:?}; expected ({}, {n}), ({}, {n})",
            p.k.shape(),
            p.l.shape(),
            g.m1(),
            g.m2()
        )));
    }
    Ok(())
}

/// `A - B1 K - B2 L`.
pub fn closed_loop(g: &GameInstance, p: &PolicyPair) -> Result<Matrix> {
    check_policy_dims(g, p)?;
    Ok(g.a() - g.b1() * &p.k - g.b2() * &p.l)
}

/// Spectral radius of the closed loop.
pub fn closed_loop_radius(g: &GameInstance, p: &PolicyPair) -> Result<f64> {
    linalg::spectral_radius(&closed_loop(g, p)?)
}

/// True iff `rho(A - B1 K - B2 L) < 1`. Malformed input is inadmissible.
pub fn is_admissible(g: &GameInstance, p: &PolicyPair) -> bool {
    closed_loop_radius(g, p).map(|r| r < 1.0).unwrap_or(false)
}

/// Closed-loop state weight `Q + K^T R1 K - L^T R2 L`.
pub fn stage_weight(g: &GameInstance, p: &PolicyPair) -> SymMatrix {
    SymMatrix::symmetrize(
        g.q().as_matrix() + p.k.transpose() * g.r1().as_matrix() * &p.k
            - p.l.transpose() * g.r2().as_matrix() * &p.l,
    )
}

/// Solves the value and metric Lyapunov equations. Refuses any pair outside
/// the stabilizing set, even where the Lyapunov system happens to be solvable.
pub fn value_certificate(g: &GameInstance, p: &PolicyPair) -> Result<ValueCertificate> {
    let acl = closed_loop(g, p)?;
    let rho = linalg::spectral_radius(&acl)?;
    if rho >= 1.0 {
        return Err(Error::NotSchur { rho });
    }
    let x = linalg::solve_discrete_lyapunov(&acl, &stage_weight(g, p))?;
    let y = linalg::solve_dual_lyapunov(&acl, g.sigma())?;
    let cost = (x.as_matrix() * g.sigma().as_matrix()).trace();
    Ok(ValueCertificate { x, y, cost })
}

/// Cost `f(K, L)`; errors outside the stabilizing set.
pub fn cost(g: &GameInstance, p: &PolicyPair) -> Result<f64> {
    let acl = closed_loop(g, p)?;
    let rho = linalg::spectral_radius(&acl)?;
    if rho >= 1.0 {
        return Err(Error::NotSchur { rho });
    }
    let x = linalg::solve_discrete_lyapunov(&acl, &stage_weight(g, p))?;
    Ok((x.as_matrix() * g.sigma().as_matrix()).trace())
}

/// Natural gradients `(U, V)` at `p` given its value matrix.
pub fn natural_gradients(g: &GameInstance, p: &PolicyPair, x: &SymMatrix) -> Result<(Matrix, Matrix)> {
    let acl = closed_loop(g, p)?;
    let xa = x.as_matrix() * &acl;
    let u = g.r1().as_matrix() * &p.k - g.b1().transpose() * &xa;
    let v = -(g.r2().as_matrix() * &p.l) - g.b2().transpose() * &xa;
    Ok((u, v))
}

/// Euclidean and natural gradients of `f` at an admissible pair.
pub fn gradient_bundle(
    g: &GameInstance,
    p: &PolicyPair,
    cert: &ValueCertificate,
) -> Result<GradientBundle> {
    let (u, v) = natural_gradients(g, p, &cert.x)?;
    let y = cert.y.as_matrix();
    Ok(GradientBundle {
        grad_k: &u * y * 2.0,
        grad_l: &v * y * 2.0,
        u,
        v,
    })
}

/// `R1 + B1^T X B1`.
pub fn follower_curvature(g: &GameInstance, x: &SymMatrix) -> SymMatrix {
    SymMatrix::symmetrize(
        g.r1().as_matrix() + g.b1().transpose() * x.as_matrix() * g.b1(),
    )
}

/// `R2 - B2^T X B2 + B2^T X B1 (R1 + B1^T X B1)^{-1} B1^T X B2`, the leader
/// curvature for the L-leader iteration.
pub fn o_matrix(g: &GameInstance, x: &SymMatrix) -> Result<SymMatrix> {
    let x = x.as_matrix();
    let e = follower_curvature(g, &SymMatrix::symmetrize(x.clone()));
    let b1xb2 = g.b1().transpose() * x * g.b2();
    let inner = solve_checked(e.as_matrix(), &b1xb2, "R1 + B1^T X B1")?;
    Ok(SymMatrix::symmetrize(
        g.r2().as_matrix() - g.b2().transpose() * x * g.b2() + b1xb2.transpose() * inner,
    ))
}

/// `R1 + B1^T X B1 + B1^T X B2 (R2 - B2^T X B2)^{-1} B2^T X B1`, the leader
/// curvature for the K-leader iteration.
pub fn o_matrix_leader_k(g: &GameInstance, x: &SymMatrix) -> Result<SymMatrix> {
    let xm = x.as_matrix();
    let d = g.r2().as_matrix() - g.b2().transpose() * xm * g.b2();
    let b2xb1 = g.b2().transpose() * xm * g.b1();
    let inner = solve_checked(&d, &b2xb1, "R2 - B2^T X B2")?;
    Ok(SymMatrix::symmetrize(
        follower_curvature(g, x).as_matrix() + b2xb1.transpose() * inner,
    ))
}

/// Riccati map `A^T X A + Q - X - A^T X B (R + B^T X B)^{-1} B^T X A`.
pub fn riccati_map(
    a: &Matrix,
    b: &Matrix,
    q: &SymMatrix,
    r: &SymMatrix,
    x: &SymMatrix,
) -> Result<SymMatrix> {
    let xm = x.as_matrix();
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.dim() != n || x.dim() != n || r.dim() != b.ncols() {
        return Err(Error::Dimension("riccati_map operand shapes disagree".into()));
    }
    let btxa = b.transpose() * xm * a;
    let gram = r.as_matrix() + b.transpose() * xm * b;
    let base = a.transpose() * xm * a + q.as_matrix() - xm;
    if b.ncols() == 0 {
        return Ok(SymMatrix::symmetrize(base));
    }
    let gain = solve_checked(&gram, &btxa, "R + B^T X B")?;
    Ok(SymMatrix::symmetrize(base - btxa.transpose() * gain))
}

/// Block matrix `[[R1 + B1^T X B1, B1^T X B2], [B2^T X B1, -R2 + B2^T X B2]]`.
pub fn gare_block(g: &GameInstance, x: &SymMatrix) -> Matrix {
    let b = g.b_joint();
    let (m1, m2) = (g.m1(), g.m2());
    let mut r = Matrix::zeros(m1 + m2, m1 + m2);
    r.view_mut((0, 0), (m1, m1)).copy_from(g.r1().as_matrix());
    r.view_mut((m1, m1), (m2, m2)).copy_from(&(-g.r2().as_matrix()));
    r + b.transpose() * x.as_matrix() * &b
}

/// Left-hand side of the generalized algebraic Riccati equation
///
/// ```text
/// A^T X A - X + Q - P^T M^{-1} P,   P = [B1^T X A; B2^T X A],  M = gare_block(X)
/// ```
///
/// which vanishes at the value matrix of a stabilizing Nash equilibrium.
pub fn gare_residual(g: &GameInstance, x: &SymMatrix) -> Result<SymMatrix> {
    if x.dim() != g.n() {
        return Err(Error::Dimension("GARE: X has wrong dimension".into()));
    }
    let xm = x.as_matrix();
    let p = g.b_joint().transpose() * xm * g.a();
    let block = gare_block(g, x);
    let sol = solve_checked(&block, &p, "GARE block matrix")?;
    Ok(SymMatrix::symmetrize(
        g.a().transpose() * xm * g.a() - xm + g.q().as_matrix() - p.transpose() * sol,
    ))
}

/// The pair obtained from `X` by the first-order conditions:
/// `[K; L] = M^{-1} [B1^T X A; B2^T X A]`.
pub fn policies_from_value(g: &GameInstance, x: &SymMatrix) -> Result<PolicyPair> {
    let p = g.b_joint().transpose() * x.as_matrix() * g.a();
    let sol = solve_checked(&gare_block(g, x), &p, "GARE block matrix")?;
    let n = g.n();
    Ok(PolicyPair {
        k: sol.view((0, 0), (g.m1(), n)).into_owned(),
        l: sol.view((g.m1(), 0), (g.m2(), n)).into_owned(),
    })
}

/// Which of the two curvature conditions hold at a Nash value matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssumptionStatus {
    A1,
    A2,
    Both,
    Neither,
}

impl AssumptionStatus {
    pub fn a1(self) -> bool {
        matches!(self, Self::A1 | Self::Both)
    }
    pub fn a2(self) -> bool {
        matches!(self, Self::A2 | Self::Both)
    }
    fn from_flags(a1: bool, a2: bool) -> Self {
        match (a1, a2) {
            (true, true) => Self::Both,
            (true, false) => Self::A1,
            (false, true) => Self::A2,
            (false, false) => Self::Neither,
        }
    }
}

/// Evaluates
/// (a1) `R1 + B1^T X B1 > 0` and `O_X > 0`;
/// (a2) `-R2 + B2^T X B2 < 0` and
///      `R1 + B1^T X B1 - B1^T X B2 (-R2 + B2^T X B2)^{-1} B2^T X B1 > 0`,
/// each with margin `1e-10`. The second half of a condition is only
/// evaluated when the first half holds, so no singular inverse arises.
pub fn check_assumption(g: &GameInstance, x: &SymMatrix) -> AssumptionStatus {
    let m = DEFINITENESS_MARGIN;
    let a1 = follower_curvature(g, x).is_positive_definite(m)
        && o_matrix(g, x).map(|o| o.is_positive_definite(m)).unwrap_or(false);
    let a2 = {
        let xm = x.as_matrix();
        let neg = SymMatrix::symmetrize(g.r2().as_matrix() - g.b2().transpose() * xm * g.b2());
        neg.is_positive_definite(m)
            && o_matrix_leader_k(g, x)
                .map(|o| o.is_positive_definite(m))
                .unwrap_or(false)
    };
    AssumptionStatus::from_flags(a1, a2)
}
