//! Rényi divergences between discrete distributions and between shifted
//! Gaussians.

use crate::error::{invalid, Result};

fn validate_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(invalid(format!("distributions have lengths {} and {}", p.len(), q.len())));
    }
    if p.is_empty() {
        return Err(invalid("empty distribution"));
    }
    if p.iter().chain(q).any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(invalid("probabilities must be finite and nonnegative"));
    }
    let sp: f64 = p.iter().sum();
    if (sp - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("p sums to {sp}, not 1")));
    }
    Ok(())
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `1/(alpha-1) * ln sum_i p_i^alpha / q_i^(alpha-1)`, evaluated in log
/// space. Terms with `p_i = 0` contribute nothing; for `alpha > 1` any
/// `p_i > 0` with `q_i = 0` gives `+inf`.
pub fn renyi_divergence_discrete(p: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    validate_pair(p, q)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("order must be positive and finite, got {alpha}")));
    }
    if alpha == 1.0 {
        return Err(invalid("order 1 is the KL divergence; use kl_divergence"));
    }
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            if alpha > 1.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        terms.push(alpha * pi.ln() - (alpha - 1.0) * qi.ln());
    }
    let d = log_sum_exp(&terms) / (alpha - 1.0);
    // rounding can leave tiny negatives for p == q
    Ok(d.max(0.0))
}

/// `sum_i p_i ln(p_i / q_i)`, the order-1 limit.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    validate_pair(p, q)?;
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        d += pi * (pi / qi).ln();
    }
    Ok(d.max(0.0))
}

/// Closed form `alpha * mu^2 / (2 sigma^2)` for `N(mu, sigma^2)` against
/// `N(0, sigma^2)`.
pub fn gaussian_renyi_divergence(mu_shift: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    if !(alpha > 1.0) {
        return Err(invalid(format!("order must exceed 1, got {alpha}")));
    }
    Ok(alpha * mu_shift * mu_shift / (2.0 * sigma * sigma))
}

/// Probability masses of `N(mean, sigma^2)` on a uniform grid, normalised
/// to sum to one.
pub fn discretized_gaussian(mean: f64, sigma: f64, grid: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let z = (x - mean) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Uniform grid from `lo` to `hi` (inclusive) with spacing `step`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}
