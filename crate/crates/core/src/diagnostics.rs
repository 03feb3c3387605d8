//! Verification tools: Nash certificates, comparison identities, the
//! Hessian of `g`, finite-difference arbitration and the telescoped
//! sublinear bound.
//!
//! Hessian of `g(L) = min_K f(K, L)` along `E`, at `L` with best response
//! `K0`, `A0 = A - B1 K0 - B2 L`, `E1 = R1 + B1^T X0 B1`:
//!
//! ```text
//! X'  = A0^T X' A0 + E^T V0 + V0^T E
//! K'  = E1^{-1} (B1^T X' A0 - B1^T X0 B2 E)
//! A0' = -B1 K' - B2 E
//! Y'  = A0 Y' A0^T + A0' Y0 A0^T + A0 Y0 A0'^T
//! V'  = -R2 E - B2^T X' A0 - B2^T X0 A0'
//! <Hess g(L) E, E> = 2 <V' Y0 + V0 Y', E>
//! ```
//!
//! At a Nash point `X' = 0` and the value collapses to `-2 <O E Y, E>`. The
//! leading factor 2 is the one that matches second differences of `g`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{self, AssumptionStatus, GameInstance, PolicyPair};
use crate::inner::{bootstrap_stabilizing_gain, inner_solve, InnerMethod, InnerReport};
use crate::linalg::{self, solve_checked, Matrix, SymMatrix};
use crate::outer::{Leader, OuterTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NashCertificate {
    /// `||U||_F`.
    pub stationarity_k: f64,
    /// `||V||_F`.
    pub stationarity_l: f64,
    pub rho: f64,
    pub gare_norm: f64,
    pub assumption: AssumptionStatus,
    pub pass: bool,
}

/// Certifies `(K, L)` as a stabilizing Nash equilibrium to `tol`. Failures
/// are encoded in the fields; malformed or destabilizing input simply fails.
pub fn nash_certificate(g: &GameInstance, k: &Matrix, l: &Matrix, tol: f64) -> NashCertificate {
    let failed = |rho: f64| NashCertificate {
        stationarity_k: f64::INFINITY,
        stationarity_l: f64::INFINITY,
        rho,
        gare_norm: f64::INFINITY,
        assumption: AssumptionStatus::Neither,
        pass: false,
    };
    let p = PolicyPair::new(k.clone(), l.clone());
    let rho = match game::closed_loop_radius(g, &p) {
        Ok(r) => r,
        Err(_) => return failed(f64::INFINITY),
    };
    let cert = match game::value_certificate(g, &p) {
        Ok(c) => c,
        Err(_) => return failed(rho),
    };
    let (u, v) = match game::natural_gradients(g, &p, &cert.x) {
        Ok(uv) => uv,
        Err(_) => return failed(rho),
    };
    let gare_norm = game::gare_residual(g, &cert.x).map(|r| r.norm()).unwrap_or(f64::INFINITY);
    let assumption = game::check_assumption(g, &cert.x);
    let (sk, sl) = (u.norm(), v.norm());
    let pass = sk <= tol
        && sl <= tol
        && rho < 1.0
        && gare_norm <= tol
        && assumption != AssumptionStatus::Neither;
    NashCertificate {
        stationarity_k: sk,
        stationarity_l: sl,
        rho,
        gare_norm,
        assumption,
        pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonForm {
    /// Expansion around `(K, L)` with the closed loop of the second pair.
    A,
    /// Expansion around the second pair with the closed loop of `(K, L)`.
    B,
}

/// Frobenius norm of `LHS - RHS` in the exact expansion of `X - X_hat`
/// for two admissible pairs.
pub fn comparison_residual(
    g: &GameInstance,
    p1: &PolicyPair,
    p2: &PolicyPair,
    form: ComparisonForm,
) -> Result<f64> {
    let c1 = game::value_certificate(g, p1)?;
    let c2 = game::value_certificate(g, p2)?;
    let a1 = game::closed_loop(g, p1)?;
    let a2 = game::closed_loop(g, p2)?;
    let dx = c1.x.as_matrix() - c2.x.as_matrix();
    let dk = &p1.k - &p2.k;
    let dl = &p1.l - &p2.l;
    let da = &a1 - &a2;
    let r1 = g.r1().as_matrix();
    let r2 = g.r2().as_matrix();
    let sym = |m: &Matrix, n: &Matrix| m.transpose() * n + n.transpose() * m;
    let rhs = match form {
        ComparisonForm::A => {
            let (u, v) = game::natural_gradients(g, p1, &c1.x)?;
            a2.transpose() * &dx * &a2 + sym(&dk, &u) - dk.transpose() * r1 * &dk + sym(&dl, &v)
                + dl.transpose() * r2 * &dl
                - da.transpose() * c1.x.as_matrix() * &da
        }
        ComparisonForm::B => {
            let (u, v) = game::natural_gradients(g, p2, &c2.x)?;
            a1.transpose() * &dx * &a1 + sym(&dk, &u) + dk.transpose() * r1 * &dk + sym(&dl, &v)
                - dl.transpose() * r2 * &dl
                + da.transpose() * c2.x.as_matrix() * &da
        }
    };
    Ok((dx - rhs).norm())
}

/// The follower's stabilizing best response to `L`, solved by quasi-Newton
/// from a bootstrap gain to near machine precision.
pub fn best_response(g: &GameInstance, l: &Matrix) -> Result<InnerReport> {
    let a_l = g.a() - g.b2() * l;
    let m0 = bootstrap_stabilizing_gain(&a_l, g.b1())?;
    let first = inner_solve(g, l, InnerMethod::QuasiNewton, &m0, 1e-9, 200)?;
    let tol = 1e-14 * first.x_plus.norm().max(1.0);
    match inner_solve(g, l, InnerMethod::QuasiNewton, &first.k_opt, tol, 50) {
        Ok(r) => Ok(r),
        // Roundoff can keep the last digits from settling; the previous
        // iterate is then as good as it gets.
        Err(Error::InnerNonConvergence { report }) if report.final_grad_norm <= 1e-11 * first.x_plus.norm().max(1.0) => {
            Ok(*report)
        }
        Err(e) => Err(e),
    }
}

/// `g(L)`: the cost at the follower's best response.
pub fn g_value(g: &GameInstance, l: &Matrix) -> Result<f64> {
    let rep = best_response(g, l)?;
    Ok((rep.x_plus.as_matrix() * g.sigma().as_matrix()).trace())
}

/// Residual norms of the two identities relating the best-response value
/// matrices at `L` and `L_tilde`: the Lyapunov/Riccati split of `X - X_tilde`
/// and the expansion of the Riccati map at `X_tilde` in `L - L_tilde`.
pub fn comparison2_residual(g: &GameInstance, l: &Matrix, lt: &Matrix) -> Result<(f64, f64)> {
    let rep = best_response(g, l)?;
    let rep_t = best_response(g, lt)?;
    let k = &rep.k_opt;
    let x = rep.x_plus.as_matrix();
    let xt = &rep_t.x_plus;
    let a_l = g.a() - g.b2() * l;
    let acl = &a_l - g.b1() * k;
    let q_l = SymMatrix::symmetrize(g.q().as_matrix() - l.transpose() * g.r2().as_matrix() * l);
    let ric = game::riccati_map(&a_l, g.b1(), &q_l, g.r1(), xt)?;
    let e = game::follower_curvature(g, xt);
    let f = g.b1().transpose() * xt.as_matrix() * &a_l;
    let ekf = e.as_matrix() * k - &f;
    let e_inv_ekf = solve_checked(e.as_matrix(), &ekf, "R1 + B1^T X B1")?;
    let dx = x - xt.as_matrix();
    let first = &dx - (acl.transpose() * &dx * &acl + ric.as_matrix() + ekf.transpose() * e_inv_ekf);

    let pt = PolicyPair::new(rep_t.k_opt.clone(), lt.clone());
    let (_, vt) = game::natural_gradients(g, &pt, xt)?;
    let o = game::o_matrix(g, xt)?;
    let dl = l - lt;
    let second = ric.as_matrix()
        - (dl.transpose() * &vt + vt.transpose() * &dl - dl.transpose() * o.as_matrix() * &dl);
    Ok((first.norm(), second.norm()))
}

/// For the ascent step `L = L_tilde + 2 eta V`, returns the Riccati map of
/// the new follower problem at `X_tilde` and its predicted closed form
/// `V^T (4 eta I - 4 eta^2 O) V`.
pub fn step_riccati_gap(g: &GameInstance, lt: &Matrix, eta: f64) -> Result<(SymMatrix, SymMatrix)> {
    let rep_t = best_response(g, lt)?;
    let xt = &rep_t.x_plus;
    let pt = PolicyPair::new(rep_t.k_opt.clone(), lt.clone());
    let (_, v) = game::natural_gradients(g, &pt, xt)?;
    let l = lt + &v * (2.0 * eta);
    let a_l = g.a() - g.b2() * &l;
    let q_l = SymMatrix::symmetrize(g.q().as_matrix() - l.transpose() * g.r2().as_matrix() * &l);
    let ric = game::riccati_map(&a_l, g.b1(), &q_l, g.r1(), xt)?;
    let o = game::o_matrix(g, xt)?;
    let m = g.m2();
    let mid = Matrix::identity(m, m) * (4.0 * eta) - o.as_matrix() * (4.0 * eta * eta);
    Ok((ric, SymMatrix::symmetrize(v.transpose() * mid * &v)))
}

/// `<Hess g(L) E, E>` from the closed-form derivative equations.
pub fn hessian_g_action(g: &GameInstance, l: &Matrix, e: &Matrix) -> Result<f64> {
    if e.shape() != l.shape() {
        return Err(Error::Dimension("direction E must have the shape of L".into()));
    }
    let rep = best_response(g, l)?;
    let x0 = rep.x_plus.as_matrix();
    let k0 = &rep.k_opt;
    let e1 = game::follower_curvature(g, &rep.x_plus);
    if !e1.is_positive_definite(game::DEFINITENESS_MARGIN) {
        return Err(Error::Numerical(
            "g is not differentiable here: follower curvature is not positive definite".into(),
        ));
    }
    let pair = PolicyPair::new(k0.clone(), l.clone());
    let a0 = game::closed_loop(g, &pair)?;
    let (_, v0) = game::natural_gradients(g, &pair, &rep.x_plus)?;
    let y0 = linalg::solve_dual_lyapunov(&a0, g.sigma())?;

    let s = SymMatrix::symmetrize(e.transpose() * &v0 + v0.transpose() * e);
    let xp = linalg::solve_discrete_lyapunov(&a0, &s)?;
    let xp = xp.as_matrix();
    let rhs = g.b1().transpose() * xp * &a0 - g.b1().transpose() * x0 * g.b2() * e;
    let kp = solve_checked(e1.as_matrix(), &rhs, "R1 + B1^T X B1")?;
    let ap = -(g.b1() * &kp) - g.b2() * e;
    let sp = SymMatrix::symmetrize(&ap * y0.as_matrix() * a0.transpose() + &a0 * y0.as_matrix() * ap.transpose());
    let yp = linalg::solve_dual_lyapunov(&a0, &sp)?;
    let vp = -(g.r2().as_matrix() * e) - g.b2().transpose() * xp * &a0 - g.b2().transpose() * x0 * &ap;
    let d = vp * y0.as_matrix() + &v0 * yp.as_matrix();
    Ok(2.0 * d.dot(e))
}

/// Analytic Hessian action next to its second central difference.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianProbe {
    pub l: Matrix,
    pub e: Matrix,
    pub value: f64,
    pub fd_value: f64,
}

impl HessianProbe {
    pub fn rel_error(&self) -> f64 {
        (self.value - self.fd_value).abs() / self.fd_value.abs().max(1.0)
    }
}

pub fn hessian_probe(g: &GameInstance, l: &Matrix, e: &Matrix, h: f64) -> Result<HessianProbe> {
    let value = hessian_g_action(g, l, e)?;
    let gp = g_value(g, &(l + e * h))?;
    let g0 = g_value(g, l)?;
    let gm = g_value(g, &(l - e * h))?;
    Ok(HessianProbe {
        l: l.clone(),
        e: e.clone(),
        value,
        fd_value: (gp - 2.0 * g0 + gm) / (h * h),
    })
}

/// Largest entrywise relative error between the analytic gradients and
/// central differences of the cost. A probe that leaves the stabilizing set
/// shrinks the step tenfold, at most five times.
pub fn fd_gradient_check(g: &GameInstance, p: &PolicyPair, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let cert = game::value_certificate(g, p)?;
    let grads = game::gradient_bundle(g, p, &cert)?;
    let central = |which: usize, i: usize, j: usize| -> Result<f64> {
        let mut h = step;
        for _ in 0..=5 {
            let mut plus = p.clone();
            let mut minus = p.clone();
            let (mp, mm) = if which == 0 { (&mut plus.k, &mut minus.k) } else { (&mut plus.l, &mut minus.l) };
            mp[(i, j)] += h;
            mm[(i, j)] -= h;
            match (game::cost(g, &plus), game::cost(g, &minus)) {
                (Ok(fp), Ok(fm)) => return Ok((fp - fm) / (2.0 * h)),
                (Err(Error::NotSchur { .. }), _) | (_, Err(Error::NotSchur { .. })) => h *= 0.1,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        Err(Error::Numerical(format!(
            "finite-difference probe left the stabilizing set even with step {:e}",
            step * 1e-5
        )))
    };
    let mut pairs = Vec::new();
    for (which, analytic) in [(0usize, &grads.grad_k), (1, &grads.grad_l)] {
        for i in 0..analytic.nrows() {
            for j in 0..analytic.ncols() {
                pairs.push((analytic[(i, j)], central(which, i, j)?));
            }
        }
    }
    let fd_max = pairs.iter().map(|(_, fd)| fd.abs()).fold(0.0, f64::max);
    Ok(pairs
        .iter()
        .map(|(an, fd)| (an - fd).abs() / fd.abs().max(1e-3 * fd_max).max(1e-10))
        .fold(0.0, f64::max))
}

/// Telescoped sum of squared leader natural gradients against the bound
/// `(1/eta) (value gain) / min(1, lambda_min(Sigma))`, with
/// `eta = min_j 1/lambda_max(O_j)` over the rounds that took a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SublinearCertificate {
    pub sum_sq: f64,
    pub bound: f64,
    pub eta: f64,
    pub holds: bool,
}

/// `None` for aggressive-stepsize traces (no decrease guarantee) and
/// traces without a step.
pub fn sublinear_certificate(trace: &OuterTrace, sigma_min: f64) -> Option<SublinearCertificate> {
    if trace.aggressive {
        return None;
    }
    let steps: Vec<_> = trace.records.iter().filter(|r| r.eta > 0.0).collect();
    let (first, last) = (trace.records.first()?, trace.records.last()?);
    if steps.is_empty() {
        return None;
    }
    let sum_sq: f64 = steps.iter().map(|r| (0.5 * r.ng_norm).powi(2)).sum();
    let eta = steps.iter().map(|r| 1.0 / r.lambda_max_o).fold(f64::INFINITY, f64::min);
    let gain = match trace.leader {
        Leader::PlayerL => last.cost - first.cost,
        Leader::PlayerK => first.cost - last.cost,
    };
    let bound = gain / (eta * sigma_min.min(1.0));
    Some(SublinearCertificate {
        sum_sq,
        bound,
        eta,
        holds: sum_sq <= bound * (1.0 + 1e-9) + 1e-14,
    })
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

    fn g1_nash() -> PolicyPair {
        let x = (6.95 + (6.95f64 * 6.95 + 4.0 * 4.75 * 5.0).sqrt()) / (2.0 * 4.75);
        game::policies_from_value(&g1(), &SymMatrix::new(dmatrix![x], "X").unwrap()).unwrap()
    }

    #[test]
    fn identical_pairs_have_zero_residual() {
        let g = g1();
        let p = PolicyPair::new(dmatrix![0.8], dmatrix![-0.2]);
        for form in [ComparisonForm::A, ComparisonForm::B] {
            assert_eq!(comparison_residual(&g, &p, &p, form).unwrap(), 0.0);
        }
        let (a, b) = comparison2_residual(&g, &dmatrix![0.1], &dmatrix![0.1]).unwrap();
        assert!(a <= 1e-12 && b <= 1e-12);
    }

    #[test]
    fn comparison_identities_hold_on_g1() {
        let g = g1();
        let p1 = PolicyPair::new(dmatrix![0.8], dmatrix![-0.2]);
        let p2 = PolicyPair::new(dmatrix![0.6], dmatrix![0.1]);
        for form in [ComparisonForm::A, ComparisonForm::B] {
            assert!(comparison_residual(&g, &p1, &p2, form).unwrap() <= 1e-10);
        }
        let ls = g1_nash().l;
        let (a, b) = comparison2_residual(&g, &(&ls + dmatrix![0.01]), &ls).unwrap();
        assert!(a <= 1e-9 && b <= 1e-9, "{a:e} {b:e}");
    }

    #[test]
    fn certificate_cases() {
        let g = g1();
        let p = g1_nash();
        assert!(nash_certificate(&g, &p.k, &p.l, 1e-8).pass);
        let off = nash_certificate(&g, &p.k, &(&p.l + dmatrix![0.1]), 1e-8);
        assert!(off.stationarity_l > 1e-8 && !off.pass);
        let bad = nash_certificate(&g, &dmatrix![0.0], &dmatrix![0.0], 1e-8);
        assert!(bad.rho >= 1.0 && !bad.pass);
    }

    #[test]
    fn hessian_zero_direction() {
        let g = g1();
        assert_eq!(hessian_g_action(&g, &g1_nash().l, &dmatrix![0.0]).unwrap(), 0.0);
    }

    #[test]
    fn hessian_matches_second_difference() {
        let g = g1();
        let l = &g1_nash().l + dmatrix![0.05];
        let probe = hessian_probe(&g, &l, &dmatrix![1.0], 1e-4).unwrap();
        assert!(probe.rel_error() <= 1e-4, "{probe:?}");
    }

    #[test]
    fn hessian_negative_at_nash() {
        let g = g1();
        assert!(hessian_g_action(&g, &g1_nash().l, &dmatrix![0.3]).unwrap() < 0.0);
    }

    #[test]
    fn fd_gradient_on_g1() {
        let g = g1();
        let p = PolicyPair::new(dmatrix![0.8], dmatrix![-0.2]);
        assert!(fd_gradient_check(&g, &p, 1e-6).unwrap() <= 1e-5);
    }

    #[test]
    fn step_gap_is_psd_for_admissible_eta() {
        let g = g1();
        let lt = dmatrix![0.0];
        let rep = best_response(&g, &lt).unwrap();
        let o = game::o_matrix(&g, &rep.x_plus).unwrap();
        let eta = 1.0 / o.max_eig();
        let (ric, pred) = step_riccati_gap(&g, &lt, eta).unwrap();
        assert!((ric.as_matrix() - pred.as_matrix()).norm() <= 1e-9 * rep.x_plus.norm().max(1.0));
        assert!(ric.min_eig() >= -1e-10);
    }
}
