//! Reference computations used as oracles. None of them call the library's
//! Lyapunov, Riccati or gradient code.
#![allow(dead_code)]

use lqnash_core::game::GameInstance;
use lqnash_core::generate::{random_instance, GeneratorOptions};
use lqnash_core::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Dimensions cycling through `n <= 6`, `m1, m2 <= 3`.
pub fn dims(seed: u64) -> (usize, usize, usize) {
    let s = seed as usize;
    (1 + s % 6, 1 + (s / 6) % 3, 1 + (s / 18) % 3)
}

pub fn instance(seed: u64) -> GameInstance {
    let (n, m1, m2) = dims(seed);
    random_instance(&GeneratorOptions::new(n, m1, m2, seed)).expect("generator succeeds")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Spectral radius via the characteristic behavior of powers: `||M^k||^(1/k)`
/// for a large power, normalized at each squaring.
pub fn radius_by_powers(m: &Matrix) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..12 {
        let nrm = p.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        p /= nrm;
        log_scale += nrm.ln() / k;
        p = &p * &p;
        k *= 2.0;
    }
    (log_scale + p.norm().ln() / k).exp()
}

/// `X = sum_k (A^T)^k Q A^k` by Smith doubling. Requires `rho(A) < 1`.
pub fn lyap_smith(a: &Matrix, q: &Matrix) -> Matrix {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = ak.transpose() * &x * &ak;
        let done = inc.norm() <= 1e-17 * x.norm();
        x += inc;
        ak = &ak * &ak;
        if done {
            break;
        }
    }
    (&x + x.transpose()) * 0.5
}

pub fn closed_loop(g: &GameInstance, k: &Matrix, l: &Matrix) -> Matrix {
    g.a() - g.b1() * k - g.b2() * l
}

/// `f(K, L) = Tr(X Sigma)` with `X` from Smith doubling.
pub fn cost(g: &GameInstance, k: &Matrix, l: &Matrix) -> f64 {
    let acl = closed_loop(g, k, l);
    let w = g.q().as_matrix() + k.transpose() * g.r1().as_matrix() * k - l.transpose() * g.r2().as_matrix() * l;
    (lyap_smith(&acl, &w) * g.sigma().as_matrix()).trace()
}

/// Central differences of [`cost`] in every entry of `K` and of `L`.
pub fn fd_gradients(g: &GameInstance, k: &Matrix, l: &Matrix, h: f64) -> (Matrix, Matrix) {
    let mut gk = Matrix::zeros(k.nrows(), k.ncols());
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            let (mut kp, mut km) = (k.clone(), k.clone());
            kp[(i, j)] += h;
            km[(i, j)] -= h;
            gk[(i, j)] = (cost(g, &kp, l) - cost(g, &km, l)) / (2.0 * h);
        }
    }
    let mut gl = Matrix::zeros(l.nrows(), l.ncols());
    for i in 0..l.nrows() {
        for j in 0..l.ncols() {
            let (mut lp, mut lm) = (l.clone(), l.clone());
            lp[(i, j)] += h;
            lm[(i, j)] -= h;
            gl[(i, j)] = (cost(g, k, &lp) - cost(g, k, &lm)) / (2.0 * h);
        }
    }
    (gk, gl)
}

/// Kleinman iteration for `min_K Tr(X Sigma)` on `(a, b, q, r)` from a
/// stabilizing `k0`. Returns `(X, K)`.
pub fn dare_kleinman(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, k0: &Matrix) -> (Matrix, Matrix) {
    let mut k = k0.clone();
    let mut x = Matrix::zeros(a.nrows(), a.ncols());
    for _ in 0..100 {
        let acl = a - b * &k;
        let x_new = lyap_smith(&acl, &(q + k.transpose() * r * &k));
        let e = r + b.transpose() * &x_new * b;
        k = e.lu().solve(&(b.transpose() * &x_new * a)).expect("r + b^T X b invertible");
        let change = (&x_new - &x).norm();
        x = x_new;
        if change <= 1e-15 * x.norm().max(1.0) {
            break;
        }
    }
    (x, k)
}

/// `g(L)`: the follower's optimal cost, by Kleinman from `k0`.
pub fn g_value(g: &GameInstance, l: &Matrix, k0: &Matrix) -> f64 {
    let a = g.a() - g.b2() * l;
    let q = g.q().as_matrix() - l.transpose() * g.r2().as_matrix() * l;
    let (x, _) = dare_kleinman(&a, g.b1(), &q, g.r1().as_matrix(), k0);
    (x * g.sigma().as_matrix()).trace()
}

/// Residual of the scalar game Riccati equation
/// `x = q + a^2 x - (a x)^2 b^T M(x)^{-1} b`,
/// `M(x) = diag(r1, -r2) + b x b^T`, `b = (b1, b2)`.
pub fn scalar_gare(a: f64, b1: f64, b2: f64, q: f64, r1: f64, r2: f64, x: f64) -> f64 {
    let (m11, m12, m22) = (r1 + b1 * b1 * x, b1 * b2 * x, -r2 + b2 * b2 * x);
    let det = m11 * m22 - m12 * m12;
    let quad = (b1 * b1 * m22 - 2.0 * b1 * b2 * m12 + b2 * b2 * m11) / det;
    q + a * a * x - a * a * x * x * quad - x
}

/// Root of [`scalar_gare`] in `[lo, hi]` by bisection; the bracket must
/// straddle exactly one sign change and no pole.
pub fn scalar_gare_root(p: [f64; 6], lo: f64, hi: f64) -> f64 {
    let [a, b1, b2, q, r1, r2] = p;
    let f = |x| scalar_gare(a, b1, b2, q, r1, r2, x);
    let (mut lo, mut hi) = (lo, hi);
    let rising = f(hi) > f(lo);
    assert!(f(lo).signum() != f(hi).signum(), "bracket has no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Stabilizing root of [`scalar_gare`] on `(0, r2/b2^2)`, where the
/// maximizer's curvature `r2 - b2^2 x` stays positive.
pub fn scalar_gare_bisection(a: f64, b1: f64, b2: f64, q: f64, r1: f64, r2: f64) -> f64 {
    scalar_gare_root([a, b1, b2, q, r1, r2], 0.0, r2 / (b2 * b2) * (1.0 - 1e-12))
}

/// Scalar instance from `(a, b1, b2, q, r1, r2)` with `sigma = 1`.
pub fn scalar_game(p: [f64; 6]) -> GameInstance {
    use lqnash_core::linalg::SymMatrix;
    let m = |v: f64| Matrix::from_element(1, 1, v);
    let s = |v: f64| SymMatrix::new(m(v), "scalar").unwrap();
    GameInstance::new(m(p[0]), m(p[1]), m(p[2]), s(p[3]), s(p[4]), s(p[5]), s(1.0)).unwrap()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eig(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}
