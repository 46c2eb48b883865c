//! Truncated concentrated DP budget for training with geometric noise
//! decay, and its conversion to `(eps, delta)`.

use serde::{Deserialize, Serialize};

use super::{PrivacyAccountant, PrivacyDetail, PrivacyReport};
use crate::error::{invalid, Result};

/// Inputs to [`tcdp_budget`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcdpParams {
    /// Lot size `B`.
    pub batch_size: usize,
    /// Training set size `M`.
    pub dataset_size: usize,
    /// Clip norm `C`.
    pub clip: f64,
    /// Per-epoch variance decay `R`, strictly inside (0, 1).
    pub decay: f64,
    /// Epochs `E`.
    pub epochs: u32,
    /// Initial noise multiplier `sigma_0`.
    pub sigma0: f64,
    pub delta: f64,
}

impl TcdpParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.dataset_size {
            return Err(invalid(format!(
                "batch size {} must lie in [1, {}]",
                self.batch_size, self.dataset_size
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(invalid(format!("tCDP needs decay in (0, 1), got {}", self.decay)));
        }
        if self.epochs == 0 {
            return Err(invalid("tCDP needs at least one epoch"));
        }
        if !(self.sigma0 > 0.0) {
            return Err(invalid("sigma0 must be positive"));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(invalid("clip must be positive and finite"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }

    fn ratio(&self) -> f64 {
        self.batch_size as f64 / self.dataset_size as f64
    }

    /// `(1 - R^E) / (R^(E-1) - R^E)`.
    fn decay_factor(&self) -> f64 {
        let r = self.decay;
        let prev = pow_n(r, self.epochs - 1);
        let last = prev * r;
        (1.0 - last) / (prev - last)
    }
}

// `powi` may be constant folded with different rounding than at run time,
// which would let the same budget come out two ways.
fn pow_n(x: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * x)
}

/// `rho = 13 (B/M)^2 C^2 (1 - R^E) / (2 sigma0^2 (R^(E-1) - R^E))` and
/// `omega = ln(M/B) sigma0^2 R^(E-1) / (2 C^2)`.
pub fn tcdp_budget(p: &TcdpParams) -> Result<(f64, f64)> {
    p.validate()?;
    let (c, s0) = (p.clip, p.sigma0);
    let rho = 13.0 * p.ratio() * p.ratio() * c * c * p.decay_factor() / (2.0 * s0 * s0);
    let omega = (1.0 / p.ratio()).ln() * s0 * s0 * pow_n(p.decay, p.epochs - 1) / (2.0 * c * c);
    Ok((rho, omega))
}

/// `sigma0` giving budget `rho` under `p` (whose own `sigma0` is ignored).
pub fn sigma0_for_rho(p: &TcdpParams, rho: f64) -> Result<f64> {
    TcdpParams { sigma0: 1.0, ..*p }.validate()?;
    if !(rho > 0.0) {
        return Err(invalid("rho must be positive"));
    }
    let c = p.clip;
    Ok((13.0 * p.ratio() * p.ratio() * c * c * p.decay_factor() / (2.0 * rho)).sqrt())
}

/// `eps = rho + 2 sqrt(rho ln(1/delta))`.
pub fn rho_to_epsilon(rho: f64, delta: f64) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(invalid(format!("rho must be finite and nonnegative, got {rho}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Inverse of [`rho_to_epsilon`]: `rho = (sqrt(L + eps) - sqrt(L))^2` with
/// `L = ln(1/delta)`.
pub fn epsilon_to_rho(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(invalid("epsilon must be finite and nonnegative"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let l = (1.0 / delta).ln();
    // eps / (sqrt(L + eps) + sqrt(L)) avoids cancellation for small eps
    let root = epsilon / ((l + epsilon).sqrt() + l.sqrt());
    Ok(root * root)
}

/// `(rho, eps)` pairs for an ascending, nonnegative grid.
pub fn rho_epsilon_curve(delta: f64, rho_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if rho_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("rho grid must be ascending"));
    }
    rho_grid.iter().map(|&r| Ok((r, rho_to_epsilon(r, delta)?))).collect()
}

/// CSV with header `rho,epsilon`, shortest round-trip formatting.
pub fn curve_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("rho,epsilon\n");
    for (r, e) in points {
        out.push_str(&format!("{r:?},{e:?}\n"));
    }
    out
}

/// Accountant that counts completed epochs and evaluates [`tcdp_budget`]
/// with `E` = epochs so far.
///
/// It also records the noise multiplier used in the first step of every
/// epoch, so callers can verify the optimizer followed the decay schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TcdpAccountant {
    params: TcdpParams,
    epochs: u32,
    epoch_sigmas: Vec<f64>,
    in_epoch: bool,
}

impl TcdpAccountant {
    /// `params.epochs` is ignored; the accountant counts epochs itself.
    pub fn new(params: TcdpParams) -> Result<Self> {
        TcdpParams { epochs: 1, ..params }.validate()?;
        Ok(Self {
            params,
            epochs: 0,
            epoch_sigmas: Vec::new(),
            in_epoch: false,
        })
    }

    /// The parameters the budget will be evaluated with.
    pub fn consumed(&self) -> TcdpParams {
        TcdpParams {
            epochs: self.epochs,
            ..self.params
        }
    }

    /// Noise multiplier seen at the start of each epoch.
    pub fn epoch_sigmas(&self) -> &[f64] {
        &self.epoch_sigmas
    }
}

impl PrivacyAccountant for TcdpAccountant {
    fn kind(&self) -> &'static str {
        "tcdp"
    }

    fn record_steps(&mut self, _sampling_rate: f64, noise_multiplier: f64, steps: u64) -> Result<()> {
        if steps > 0 && !self.in_epoch {
            self.epoch_sigmas.push(noise_multiplier);
            self.in_epoch = true;
        }
        Ok(())
    }

    fn record_epoch_end(&mut self) {
        self.epochs += 1;
        self.in_epoch = false;
    }

    fn epochs(&self) -> usize {
        self.epochs as usize
    }

    fn report(&self, delta: f64) -> Result<PrivacyReport> {
        if self.epochs == 0 {
            return Ok(PrivacyReport {
                epsilon: 0.0,
                delta,
                accountant: "tcdp".into(),
                detail: PrivacyDetail::Tcdp { rho: 0.0, omega: 0.0 },
            });
        }
        let p = TcdpParams { delta, ..self.consumed() };
        let (rho, omega) = tcdp_budget(&p)?;
        Ok(PrivacyReport {
            epsilon: rho_to_epsilon(rho, delta)?,
            delta,
            accountant: "tcdp".into(),
            detail: PrivacyDetail::Tcdp { rho, omega },
        })
    }

    fn boxed_clone(&self) -> Box<dyn PrivacyAccountant> {
        Box::new(self.clone())
    }

    fn as_tcdp(&self) -> Option<&TcdpAccountant> {
        Some(self)
    }
}
