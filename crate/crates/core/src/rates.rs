//! Convergence-rate fits on error sequences.

use serde::Serialize;

/// Least-squares slope of `ln e_j` against `j` over the positive, finite
/// entries. Negative slope means geometric decay with ratio `exp(slope)`.
pub fn log_linear_slope(errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_finite() && **e > 0.0)
        .map(|(j, e)| (j as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Slope over the last `tail` entries above `floor`.
pub fn tail_slope(errors: &[f64], tail: usize, floor: f64) -> Option<f64> {
    let above: Vec<f64> = errors.iter().copied().filter(|e| *e > floor).collect();
    let start = above.len().saturating_sub(tail);
    log_linear_slope(&above[start..])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticFit {
    /// `e_j / e_{j-1}^2` at the first pair with `e_{j-1} < threshold`.
    pub q: f64,
    pub first_index: usize,
    /// Pairs checked after the fitting pair.
    pub checked: usize,
    pub holds: bool,
}

/// Fits `q` from the first pair with `floor < e_{j-1} < threshold` and checks
/// `e_j <= slack q e_{j-1}^2` on later pairs. Errors are clamped at `floor`,
/// the roundoff level: a pair that lands on the floor fits an upper bound on
/// `q` and later pairs on the floor pass.
pub fn quadratic_fit(errors: &[f64], threshold: f64, slack: f64, floor: f64) -> Option<QuadraticFit> {
    let first = (1..errors.len()).find(|&j| errors[j - 1] < threshold && errors[j - 1] > floor)?;
    let q = errors[first].max(floor) / errors[first - 1].powi(2);
    let mut checked = 0;
    let mut holds = true;
    for j in first + 1..errors.len() {
        if errors[j - 1] <= floor {
            continue;
        }
        checked += 1;
        if errors[j] > floor && errors[j] > slack * q * errors[j - 1].powi(2) {
            holds = false;
        }
    }
    Some(QuadraticFit { q, first_index: first, checked, holds })
}
