//! Noise calibration for a target epsilon.

use super::rdp::{rdp_compose_and_convert, RdpAccountantState};
use super::tcdp::{epsilon_to_rho, rho_to_epsilon, sigma0_for_rho, tcdp_budget, TcdpParams};
use super::PrivacyReport;
use crate::error::{invalid, Error, Result};

/// Bracket searched for the RDP noise multiplier.
pub const SIGMA_SEARCH_RANGE: (f64, f64) = (0.01, 100.0);
/// Maximum `|eps(sigma) - target|` accepted from the RDP search.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

/// Mechanism whose noise is being calibrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationTarget {
    /// Poisson-subsampled Gaussian composed over `epochs * steps_per_epoch`
    /// steps; with `decay < 1` the variance shrinks by `decay` after every
    /// epoch.
    Rdp {
        sampling_rate: f64,
        steps_per_epoch: u64,
        epochs: u32,
        decay: f64,
    },
    /// Closed-form tCDP budget.
    Tcdp {
        batch_size: usize,
        dataset_size: usize,
        clip: f64,
        decay: f64,
        epochs: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Noise multiplier (`sigma_0` for decaying schedules).
    pub sigma: f64,
    pub achieved_epsilon: f64,
}

/// Epsilon of the RDP target when run with initial multiplier `sigma0`.
pub fn rdp_epsilon(target: &CalibrationTarget, sigma0: f64, delta: f64) -> Result<PrivacyReport> {
    let CalibrationTarget::Rdp {
        sampling_rate,
        steps_per_epoch,
        epochs,
        decay,
    } = *target
    else {
        return Err(invalid("not an RDP calibration target"));
    };
    let mut state = RdpAccountantState::default();
    let mut sigma_sq = sigma0 * sigma0;
    for _ in 0..epochs {
        state.compose(sampling_rate, sigma_sq.sqrt(), steps_per_epoch)?;
        sigma_sq *= decay;
    }
    rdp_compose_and_convert(&state, delta)
}

/// Smallest-noise multiplier reaching `target_eps`.
///
/// RDP bisects `log sigma` over [`SIGMA_SEARCH_RANGE`] (epsilon is
/// decreasing in sigma) and returns the upper end of the final bracket, so
/// the achieved epsilon never exceeds the target. tCDP inverts the
/// `rho -> eps` map and solves the budget for `sigma0` directly.
pub fn calibrate_sigma(target_eps: f64, delta: f64, target: &CalibrationTarget) -> Result<Calibration> {
    if !(target_eps > 0.0) || !target_eps.is_finite() {
        return Err(invalid(format!("target epsilon must be positive, got {target_eps}")));
    }
    match *target {
        CalibrationTarget::Rdp { sampling_rate, decay, .. } => {
            if !(sampling_rate > 0.0 && sampling_rate <= 1.0) {
                return Err(invalid("sampling rate must lie in (0, 1]"));
            }
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(invalid("decay must lie in (0, 1]"));
            }
            let (lo0, hi0) = SIGMA_SEARCH_RANGE;
            let eps = |s: f64| rdp_epsilon(target, s, delta).map(|r| r.epsilon);
            let out_of_range = || Error::CalibrationOutOfRange {
                target: target_eps,
                lo: lo0,
                hi: hi0,
            };
            let (mut lo, mut hi) = (lo0, hi0);
            let mut eps_hi = eps(hi)?;
            if eps_hi > target_eps + CALIBRATION_TOLERANCE || eps(lo)? < target_eps {
                return Err(out_of_range());
            }
            for _ in 0..200 {
                if (eps_hi - target_eps).abs() <= CALIBRATION_TOLERANCE {
                    return Ok(Calibration {
                        sigma: hi,
                        achieved_epsilon: eps_hi,
                    });
                }
                let mid = (lo * hi).sqrt();
                if mid <= lo || mid >= hi {
                    break;
                }
                let e = eps(mid)?;
                if e > target_eps {
                    lo = mid;
                } else {
                    hi = mid;
                    eps_hi = e;
                }
            }
            Err(out_of_range())
        }
        CalibrationTarget::Tcdp {
            batch_size,
            dataset_size,
            clip,
            decay,
            epochs,
        } => {
            let mut params = TcdpParams {
                batch_size,
                dataset_size,
                clip,
                decay,
                epochs,
                sigma0: 1.0,
                delta,
            };
            let rho = epsilon_to_rho(target_eps, delta)?;
            params.sigma0 = sigma0_for_rho(&params, rho)?;
            let (rho_back, _) = tcdp_budget(&params)?;
            Ok(Calibration {
                sigma: params.sigma0,
                achieved_epsilon: rho_to_epsilon(rho_back, delta)?,
            })
        }
    }
}
