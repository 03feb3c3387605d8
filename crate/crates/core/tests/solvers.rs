mod common;

use lqnash_core::game::{self, check_assumption, AssumptionStatus};
use lqnash_core::generate::g1_preset;
use lqnash_core::linalg::Matrix;
use lqnash_core::outer::{ng_outer, ng_outer_leader_k, qn_outer, solve_nash, InitPolicy, Leader, OuterMethod, SolverConfig};
use lqnash_core::Error;

/// Scalar game whose stabilizing solution satisfies only the K-leader
/// conditions: `r1 + b1^2 x < 0` but `r2 - b2^2 x > 0` and `O_K > 0`.
const K_ONLY: [f64; 6] = [1.2, 2.0, 1.0, -1.0, 5.0, 1.0];

#[test]
fn g1_oracle_matches_closed_form_root() {
    let x = common::scalar_gare_bisection(1.2, 1.0, 0.5, 1.0, 1.0, 5.0);
    // 4.75 x^2 - 6.95 x - 5 = 0.
    assert!((4.75 * x * x - 6.95 * x - 5.0).abs() < 1e-12);
    assert!((x - 1.991_673_918_067).abs() < 1e-11);
}

#[test]
fn k_leader_converges_where_l_leader_is_not_certified() {
    let g = common::scalar_game(K_ONLY);
    let x_ref = common::scalar_gare_root(K_ONLY, -6.0, -3.0);
    assert!(x_ref < 0.0);

    let cfg = SolverConfig {
        method: OuterMethod::NaturalGradient,
        leader: Leader::PlayerK,
        init: InitPolicy::Bootstrap,
        tol: 1e-10,
        ..Default::default()
    };
    let sol = solve_nash(&g, &cfg).unwrap();
    assert!(sol.certificate.pass);
    assert_eq!(sol.certificate.assumption, AssumptionStatus::A2);
    assert!((sol.x_star[(0, 0)] - x_ref).abs() < 1e-8);

    let l_cfg = SolverConfig { method: OuterMethod::NaturalGradient, ..Default::default() };
    let certified = matches!(solve_nash(&g, &l_cfg), Ok(s) if s.certificate.pass);
    assert!(!certified);
}

#[test]
fn qn_with_k_leader_is_rejected() {
    let cfg = SolverConfig { leader: Leader::PlayerK, method: OuterMethod::QuasiNewton, ..Default::default() };
    assert!(matches!(solve_nash(&g1_preset(), &cfg), Err(Error::Config(_))));
}

#[test]
fn certified_runs_agree_on_the_value() {
    let tol = 1e-8;
    let cfg = SolverConfig { tol: 1e-10, cert_tol: tol, ..Default::default() };
    let mut compared = 0;
    for seed in 0..30 {
        let g = common::instance(seed);
        let l0 = Matrix::zeros(g.m2(), g.n());
        let (Ok(a), Ok(b)) = (qn_outer(&g, &l0, &cfg), ng_outer(&g, &l0, &cfg)) else { continue };
        if !(a.certificate.pass && b.certificate.pass) {
            continue;
        }
        for s in [&a, &b] {
            assert!(game::gare_residual(&g, &s.x_star).unwrap().norm() <= tol);
        }
        assert!((a.x_star.as_matrix() - b.x_star.as_matrix()).norm() <= 10.0 * tol * a.x_star.norm().max(1.0));
        assert!((&a.k_star - &b.k_star).norm() <= 1e-6 * a.k_star.norm().max(1.0));
        assert!((&a.l_star - &b.l_star).norm() <= 1e-6 * a.l_star.norm().max(1.0));
        compared += 1;
    }
    assert!(compared >= 15, "only {compared} instances certified by both methods");
}

#[test]
fn k_leader_matches_l_leader_on_g1() {
    let g = g1_preset();
    let cfg = SolverConfig { tol: 1e-10, ..Default::default() };
    let l = qn_outer(&g, &Matrix::zeros(1, 1), &cfg).unwrap();
    let k0 = lqnash_core::inner::bootstrap_stabilizing_gain(g.a(), g.b1()).unwrap();
    let k = ng_outer_leader_k(&g, &k0, &cfg).unwrap();
    assert_eq!(k.trace.leader, Leader::PlayerK);
    assert!((&k.k_star - &l.k_star).norm() < 1e-9);
    assert!((&k.l_star - &l.l_star).norm() < 1e-9);
    assert_eq!(check_assumption(&g, &l.x_star), AssumptionStatus::Both);
}

#[test]
fn every_outer_and_inner_iterate_is_stabilizing() {
    for seed in 0..20 {
        let g = common::instance(seed);
        let Ok(sol) = qn_outer(&g, &Matrix::zeros(g.m2(), g.n()), &SolverConfig::default()) else { continue };
        for r in &sol.trace.records {
            assert!(r.rho < 1.0 && r.inner_rho_max < 1.0, "seed {seed} round {}", r.j);
            let p = game::PolicyPair::new(r.follower_gain.clone(), r.leader_gain.clone());
            assert!((common::radius_by_powers(&common::closed_loop(&g, &p.k, &p.l)) - r.rho).abs() < 1e-2);
        }
    }
}
