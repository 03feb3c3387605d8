//! Dense matrix primitives: spectral radius, discrete Lyapunov solvers,
//! PBH stabilizability/detectability tests and symmetric eigenvalue bounds.
//!
//! Eigenvalues of symmetric matrices follow the ascending convention:
//! `lambda_1` is the smallest, `lambda_n` the largest.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative singular-value threshold used for PBH rank decisions.
pub const PBH_RANK_TOL: f64 = 1e-9;
/// Eigenvalues with `| |lambda| - 1 | <= MARGINAL_BAND` are marginal.
pub const MARGINAL_BAND: f64 = 1e-10;
/// Largest dimension solved through the Kronecker-vectorized system.
pub const KRONECKER_MAX_DIM: usize = 30;

const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;
const SCHUR_MAX_ITER: usize = 10_000;

/// Square symmetric matrix. Stored entries are always exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Validates finiteness and symmetry (to `1e-12 * max(1, ||M||_F)`), then
    /// stores the symmetric part.
    pub fn new(m: Matrix, what: &str) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "{what} must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m, what)?;
        let asym = (&m - m.transpose()).norm();
        if asym > SYMMETRY_TOL * m.norm().max(1.0) {
            return Err(Error::NotSymmetric {
                what: what.to_string(),
                asym,
            });
        }
        Ok(Self::symmetrize(m))
    }

    /// Stores `(M + M^T) / 2` without any tolerance check.
    pub fn symmetrize(m: Matrix) -> Self {
        debug_assert!(m.is_square());
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    /// Smallest eigenvalue.
    pub fn min_eig(&self) -> f64 {
        sym_eigen_bounds(self).0
    }

    /// Largest eigenvalue.
    pub fn max_eig(&self) -> f64 {
        sym_eigen_bounds(self).1
    }

    pub fn is_positive_definite(&self, margin: f64) -> bool {
        self.dim() == 0 || self.min_eig() > margin
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Matrix {
        s.0
    }
}

pub fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotFinite {
            what: what.to_string(),
        })
    }
}

fn require_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// All (complex) eigenvalues of a square real matrix.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    require_square(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    check_finite(m, "matrix")?;
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("real Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Three-valued discrete-time stability verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    /// Spectral radius within `MARGINAL_BAND` of one.
    Marginal,
    Unstable,
}

/// Classifies `m` against the unit disk shrunk by `margin`.
pub fn classify_schur(m: &Matrix, margin: f64) -> Result<Stability> {
    let rho = spectral_radius(m)?;
    Ok(if (rho - 1.0).abs() <= MARGINAL_BAND {
        Stability::Marginal
    } else if rho < 1.0 - margin {
        Stability::Stable
    } else {
        Stability::Unstable
    })
}

/// Strict Schur test: `spectral_radius(m) < 1`.
pub fn is_schur(m: &Matrix) -> Result<bool> {
    Ok(spectral_radius(m)? < 1.0)
}

/// `||A^T X A + Q - X||_F`.
pub fn lyapunov_residual(a: &Matrix, q: &Matrix, x: &Matrix) -> f64 {
    (a.transpose() * x * a + q - x).norm()
}

/// Unique symmetric `X` with `A^T X A + Q - X = 0` for Schur `A` and any
/// symmetric `Q` (definiteness is not required).
pub fn solve_discrete_lyapunov(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    require_square(a, "A")?;
    let n = a.nrows();
    if q.dim() != n {
        return Err(Error::Dimension(format!(
            "Lyapunov: A is {n}x{n} but Q is {}x{}",
            q.dim(),
            q.dim()
        )));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::NotSchur { rho });
    }
    if n == 0 {
        return Ok(SymMatrix::zeros(0));
    }
    let bound = LYAPUNOV_RESIDUAL_TOL * q.norm().max(1.0);
    let x = if n <= KRONECKER_MAX_DIM {
        lyapunov_kronecker(a, q, bound)?
    } else {
        lyapunov_doubling(a, q, bound)?
    };
    Ok(x)
}

/// Unique `Y` with `A Y A^T + Sigma = Y`.
pub fn solve_dual_lyapunov(a: &Matrix, sigma: &SymMatrix) -> Result<SymMatrix> {
    solve_discrete_lyapunov(&a.transpose(), sigma)
}

fn lyapunov_kronecker(a: &Matrix, q: &SymMatrix, bound: f64) -> Result<SymMatrix> {
    let n = a.nrows();
    let at = a.transpose();
    // vec(A^T X A) = (A^T kron A^T) vec(X) for column-major vec.
    let system = DMatrix::<f64>::identity(n * n, n * n) - at.kronecker(&at);
    let lu = system.lu();
    let solve = |rhs: &Matrix| -> Result<Matrix> {
        let v = DVector::from_column_slice(rhs.as_slice());
        let sol = lu
            .solve(&v)
            .ok_or_else(|| Error::Singular {
                what: "Kronecker Lyapunov system".into(),
                rcond: 0.0,
            })?;
        Ok(Matrix::from_column_slice(n, n, sol.as_slice()))
    };
    let mut x = SymMatrix::symmetrize(solve(q)?);
    // Refine to roundoff level; callers differentiate X, so a residual that
    // merely meets `bound` is not enough.
    let mut last = f64::INFINITY;
    for _ in 0..4 {
        let axa = &at * x.as_matrix() * a;
        let r = &axa + q.as_matrix() - x.as_matrix();
        let rn = r.norm();
        let floor = 4.0 * f64::EPSILON * (axa.norm() + q.norm() + x.norm());
        if rn <= floor || rn >= 0.5 * last {
            break;
        }
        last = rn;
        let dx = solve(&r)?;
        x = SymMatrix::symmetrize(x.into_inner() + dx);
    }
    check_finite(&x, "Lyapunov solution")?;
    check_lyapunov_accuracy(a, q, x.as_matrix(), bound)?;
    Ok(x)
}

fn lyapunov_doubling(a: &Matrix, q: &SymMatrix, bound: f64) -> Result<SymMatrix> {
    // X = sum_k (A^T)^k Q A^k, accumulated with squared powers.
    let mut x = q.as_matrix().clone();
    let mut ak = a.clone();
    for _ in 0..200 {
        let term = ak.transpose() * &x * &ak;
        let done = term.norm() <= f64::EPSILON * x.norm().max(1.0);
        x += term;
        ak = &ak * &ak;
        x = (&x + x.transpose()) * 0.5;
        if done {
            break;
        }
    }
    // Fixed-point polish X <- A^T X A + Q down to roundoff.
    let at = a.transpose();
    for _ in 0..50 {
        let next = &at * &x * a + q.as_matrix();
        let change = (&next - &x).norm();
        x = (&next + next.transpose()) * 0.5;
        if change <= 4.0 * f64::EPSILON * (x.norm() + q.norm()) {
            break;
        }
    }
    check_finite(&x, "Lyapunov solution")?;
    check_lyapunov_accuracy(a, q, &x, bound)?;
    Ok(SymMatrix(x))
}

/// Rejects solutions whose residual is far above both the requested bound
/// and the roundoff level of the data, which signals severe
/// ill-conditioning rather than a usable answer.
fn check_lyapunov_accuracy(a: &Matrix, q: &SymMatrix, x: &Matrix, bound: f64) -> Result<()> {
    let axa = a.transpose() * x * a;
    let res = (&axa + q.as_matrix() - x).norm();
    let roundoff = 1e3 * f64::EPSILON * (axa.norm() + q.norm() + x.norm());
    if res > bound.max(roundoff) * 1e3 {
        return Err(Error::Numerical(format!("Lyapunov residual {res:e} is far above {bound:e}")));
    }
    if res > bound {
        log::debug!("Lyapunov residual {res:e} above {bound:e} at roundoff level");
    }
    Ok(())
}

/// Largest singular value.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Reciprocal 2-norm condition number, `sigma_min / sigma_max`.
pub fn rcond(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Inverse of a square matrix, refusing near-singular input.
pub fn inverse_checked(m: &Matrix, what: &str) -> Result<Matrix> {
    require_square(m, what)?;
    let rc = rcond(m);
    if !(rc > 1e-14) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    m.clone().try_inverse().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        rcond: rc,
    })
}

/// Solves `M Z = rhs`, refusing near-singular `M`.
pub fn solve_checked(m: &Matrix, rhs: &Matrix, what: &str) -> Result<Matrix> {
    require_square(m, what)?;
    let rc = rcond(m);
    if !(rc > 1e-14) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    m.clone().lu().solve(rhs).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        rcond: rc,
    })
}

/// PBH test: `(A, B)` is stabilizable iff `rank [lambda I - A, B] = n` for
/// every eigenvalue of `A` outside the open unit disk. Marginal eigenvalues
/// count as unstable.
pub fn is_stabilizable(a: &Matrix, b: &Matrix) -> Result<bool> {
    require_square(a, "A")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!(
            "stabilizability: A is {n}x{n} but B has {} rows",
            b.nrows()
        )));
    }
    check_finite(b, "B")?;
    let m = b.ncols();
    let mut ab = Matrix::zeros(n, n + m);
    ab.view_mut((0, 0), (n, n)).copy_from(a);
    ab.view_mut((0, n), (n, m)).copy_from(b);
    let threshold = PBH_RANK_TOL * norm2(&ab);

    for lambda in eigenvalues(a)? {
        if lambda.norm() < 1.0 - MARGINAL_BAND {
            continue;
        }
        let mut pencil = DMatrix::<Complex64>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
                pencil[(i, j)] = diag - Complex64::new(a[(i, j)], 0.0);
            }
            for j in 0..m {
                pencil[(i, n + j)] = Complex64::new(b[(i, j)], 0.0);
            }
        }
        let rank = pencil
            .singular_values()
            .iter()
            .filter(|&&s| s > threshold)
            .count();
        if rank < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `(C, A)` is detectable iff `(A^T, C^T)` is stabilizable.
pub fn is_detectable(c: &Matrix, a: &Matrix) -> Result<bool> {
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "detectability: C has {} columns but A is {}x{}",
            c.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    is_stabilizable(&a.transpose(), &c.transpose())
}

/// `(lambda_1, lambda_n)`: smallest and largest eigenvalue.
pub fn sym_eigen_bounds(m: &SymMatrix) -> (f64, f64) {
    if m.dim() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let eig = m.as_matrix().clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eig_sym(m: &Matrix) -> f64 {
    SymMatrix::symmetrize(m.clone()).min_eig()
}
