//! Rényi DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Integer orders use the exact binomial expansion
//! `A_a = sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2-k) / (2 sigma^2))` with
//! `rdp = ln(A_a) / (a-1)`. Conversion to `(eps, delta)` is
//! `eps = min_a rdp(a) + ln(1/delta) / (a-1)`.

use serde::{Deserialize, Serialize};

use super::{PrivacyAccountant, PrivacyDetail, PrivacyReport};
use crate::error::{invalid, Result};

/// `2..=64` plus `1.5, 96, 128, 256`, ascending.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.5];
    orders.extend((2..=64).map(f64::from));
    orders.extend([96.0, 128.0, 256.0]);
    orders
}

/// Per-step RDP of the subsampled Gaussian at order `alpha`.
///
/// `q = 1` is the plain Gaussian `alpha / (2 sigma^2)` for any order > 1;
/// otherwise the order must be an integer >= 2.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    if !(alpha > 1.0) {
        return Err(invalid(format!("order must exceed 1, got {alpha}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    if alpha.fract() != 0.0 || alpha > u32::MAX as f64 {
        return Err(invalid(format!(
            "the binomial bound needs an integer order, got {alpha}"
        )));
    }
    let a = alpha as u64;
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut ln_binom = 0.0;
    let mut terms = Vec::with_capacity(a as usize + 1);
    for k in 0..=a {
        if k > 0 {
            ln_binom += ((a - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        terms.push(ln_binom + (a - k) as f64 * ln_1mq + kf * ln_q + (kf * kf - kf) * inv2s2);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_a = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    Ok((ln_a / (alpha - 1.0)).max(0.0))
}

/// One homogeneous block of composed steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpEntry {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
}

/// Composition ledger. Steps with identical `(q, sigma)` are merged into
/// integer counts, so composing `T` steps one by one or all at once gives
/// bit-identical totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpAccountantState {
    pub orders: Vec<f64>,
    pub entries: Vec<RdpEntry>,
}

impl Default for RdpAccountantState {
    fn default() -> Self {
        Self::new(default_orders()).expect("default orders are valid")
    }
}

impl RdpAccountantState {
    pub fn new(mut orders: Vec<f64>) -> Result<Self> {
        if orders.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
            return Err(invalid("every order must be finite and exceed 1"));
        }
        orders.sort_by(f64::total_cmp);
        orders.dedup();
        Ok(Self {
            orders,
            entries: Vec::new(),
        })
    }

    pub fn compose(&mut self, q: f64, sigma: f64, steps: u64) -> Result<()> {
        rdp_subsampled_gaussian(q, sigma, 2.0)?;
        if steps == 0 {
            return Ok(());
        }
        match self
            .entries
            .iter_mut()
            .find(|e| e.q.to_bits() == q.to_bits() && e.sigma.to_bits() == sigma.to_bits())
        {
            Some(e) => e.steps += steps,
            None => self.entries.push(RdpEntry { q, sigma, steps }),
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.entries.iter().map(|e| e.steps).sum()
    }

    /// Accumulated RDP per order; orders without a valid bound are `+inf`.
    pub fn rdp_accum(&self) -> Vec<f64> {
        self.orders
            .iter()
            .map(|&alpha| {
                self.entries
                    .iter()
                    .map(|e| match rdp_subsampled_gaussian(e.q, e.sigma, alpha) {
                        Ok(r) => e.steps as f64 * r,
                        Err(_) => f64::INFINITY,
                    })
                    .sum()
            })
            .collect()
    }
}

/// Minimise `rdp(a) + ln(1/delta)/(a-1)` over the order grid.
pub fn rdp_compose_and_convert(state: &RdpAccountantState, delta: f64) -> Result<PrivacyReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if state.orders.is_empty() {
        return Err(invalid("empty order grid"));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let (eps, order) = state
        .orders
        .iter()
        .zip(state.rdp_accum())
        .map(|(&a, r)| (r + log_inv_delta / (a - 1.0), a))
        .fold((f64::INFINITY, state.orders[0]), |best, cur| if cur.0 < best.0 { cur } else { best });
    Ok(PrivacyReport {
        epsilon: eps.max(0.0),
        delta,
        accountant: "rdp".into(),
        detail: PrivacyDetail::Rdp { order },
    })
}

/// [`PrivacyAccountant`] backed by an [`RdpAccountantState`].
#[derive(Debug, Clone, Default)]
pub struct RdpAccountant {
    state: RdpAccountantState,
    epochs: usize,
}

impl RdpAccountant {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_orders(orders: Vec<f64>) -> Result<Self> {
        Ok(Self {
            state: RdpAccountantState::new(orders)?,
            epochs: 0,
        })
    }

    pub fn state(&self) -> &RdpAccountantState {
        &self.state
    }
}

impl PrivacyAccountant for RdpAccountant {
    fn kind(&self) -> &'static str {
        "rdp"
    }

    fn record_steps(&mut self, sampling_rate: f64, noise_multiplier: f64, steps: u64) -> Result<()> {
        self.state.compose(sampling_rate, noise_multiplier, steps)
    }

    fn record_epoch_end(&mut self) {
        self.epochs += 1;
    }

    fn epochs(&self) -> usize {
        self.epochs
    }

    fn report(&self, delta: f64) -> Result<PrivacyReport> {
        rdp_compose_and_convert(&self.state, delta)
    }

    fn boxed_clone(&self) -> Box<dyn PrivacyAccountant> {
        Box::new(self.clone())
    }
}
