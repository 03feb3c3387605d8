//! Seeded random game instances and the scalar preset G1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::game::GameInstance;
use crate::linalg::{self, Matrix, SymMatrix};
use crate::outer::{qn_outer, SolverConfig};

/// Draws rejected for lack of stabilizability before giving up.
pub const MAX_STABILIZABLE_DRAWS: usize = 1000;
/// Solved draws tried when an indefinite `Q - L*^T R2 L*` is requested.
pub const MAX_INDEFINITE_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOptions {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub seed: u64,
    /// Control weight of the maximizing player, `R2 = r2 I`.
    pub r2: f64,
}

impl GeneratorOptions {
    pub fn new(n: usize, m1: usize, m2: usize, seed: u64) -> Self {
        Self { n, m1, m2, seed, r2: 20.0 }
    }
}

/// The scalar instance `a = 1.2, b1 = 1, b2 = 0.5, q = 1, r1 = 1, r2 = 5,
/// sigma = 1`. Its open loop is unstable and its stabilizing equilibrium
/// has `x* = 1.99167...`, the positive root of `4.75 x^2 - 6.95 x - 5 = 0`.
pub fn g1_preset() -> GameInstance {
    let s = |v: f64| SymMatrix::new(Matrix::from_element(1, 1, v), "preset").expect("scalar");
    GameInstance::new(
        Matrix::from_element(1, 1, 1.2),
        Matrix::from_element(1, 1, 1.0),
        Matrix::from_element(1, 1, 0.5),
        s(1.0),
        s(1.0),
        s(5.0),
        s(1.0),
    )
    .expect("G1 preset is a valid instance")
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn draw(rng: &mut ChaCha8Rng, opts: &GeneratorOptions, q_scale: f64) -> Result<GameInstance> {
    let n = opts.n;
    // Ginibre-like A with spectral radius around one, so roughly half the
    // draws are open-loop unstable.
    let a = normal(rng, n, n) * (1.0 / (n as f64).sqrt());
    let b1 = normal(rng, n, opts.m1);
    let b2 = normal(rng, n, opts.m2) * 0.5;
    let f = normal(rng, n, n);
    let q = SymMatrix::symmetrize((&f * f.transpose()) * (q_scale / n as f64) + Matrix::identity(n, n) * 0.1);
    GameInstance::new(
        a,
        b1,
        b2,
        q,
        SymMatrix::identity(opts.m1),
        SymMatrix::symmetrize(Matrix::identity(opts.m2, opts.m2) * opts.r2),
        SymMatrix::identity(n),
    )
}

fn check_options(opts: &GeneratorOptions) -> Result<()> {
    if opts.n == 0 || opts.m1 == 0 || opts.m2 == 0 {
        return Err(Error::Config("n, m1 and m2 must all be at least 1".into()));
    }
    if !(opts.r2 > 0.0 && opts.r2.is_finite()) {
        return Err(Error::Config(format!("r2 must be positive, got {}", opts.r2)));
    }
    Ok(())
}

fn draw_stabilizable(rng: &mut ChaCha8Rng, opts: &GeneratorOptions, q_scale: f64) -> Result<GameInstance> {
    for _ in 0..MAX_STABILIZABLE_DRAWS {
        let g = draw(rng, opts, q_scale)?;
        if linalg::is_stabilizable(g.a(), &g.b_joint())? {
            return Ok(g);
        }
    }
    Err(Error::Numerical(format!(
        "no stabilizable draw in {MAX_STABILIZABLE_DRAWS} attempts"
    )))
}

/// A random instance with `(A, [B1 B2])` stabilizable. Deterministic in
/// `opts.seed`.
pub fn random_instance(opts: &GeneratorOptions) -> Result<GameInstance> {
    check_options(opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    draw_stabilizable(&mut rng, opts, 1.0)
}

/// `lambda_min(Q - L^T R2 L)`.
pub fn effective_weight_min_eig(g: &GameInstance, l: &Matrix) -> f64 {
    SymMatrix::symmetrize(g.q().as_matrix() - l.transpose() * g.r2().as_matrix() * l).min_eig()
}

/// A random instance whose certified equilibrium has `Q - L*^T R2 L*`
/// indefinite. Draws use a smaller state weight and are solved by the
/// quasi-Newton iteration from `L0 = 0`; up to
/// [`MAX_INDEFINITE_DRAWS`] draws are tried.
pub fn indefinite_at_ne_instance(opts: &GeneratorOptions) -> Result<GameInstance> {
    check_options(opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cfg = SolverConfig::default();
    for _ in 0..MAX_INDEFINITE_DRAWS {
        let g = draw_stabilizable(&mut rng, opts, 0.05)?;
        let sol = match qn_outer(&g, &Matrix::zeros(opts.m2, opts.n), &cfg) {
            Ok(s) if s.certificate.pass => s,
            _ => continue,
        };
        if effective_weight_min_eig(&g, &sol.l_star) < 0.0 {
            return Ok(g);
        }
    }
    Err(Error::Numerical(format!(
        "no instance with indefinite Q - L*^T R2 L* in {MAX_INDEFINITE_DRAWS} draws"
    )))
}
