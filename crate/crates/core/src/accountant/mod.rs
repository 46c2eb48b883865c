//! Privacy bookkeeping.
//!
//! Two accountants implement [`PrivacyAccountant`]: `rdp` composes
//! per-step Rényi DP of the subsampled Gaussian, `tcdp` evaluates the
//! closed-form budget for geometrically decaying noise. Both are available
//! by name through [`registry`].

mod calibrate;
mod divergence;
mod rdp;
mod tcdp;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_sigma, rdp_epsilon, CalibrationTarget, Calibration, SIGMA_SEARCH_RANGE, CALIBRATION_TOLERANCE};
pub use divergence::{
    discretized_gaussian, gaussian_renyi_divergence, kl_divergence, renyi_divergence_discrete, uniform_grid,
};
pub use rdp::{default_orders, rdp_compose_and_convert, rdp_subsampled_gaussian, RdpAccountant, RdpAccountantState, RdpEntry};
pub use tcdp::{
    curve_to_csv, epsilon_to_rho, rho_epsilon_curve, rho_to_epsilon, sigma0_for_rho, tcdp_budget, TcdpAccountant,
    TcdpParams,
};

use crate::error::Result;
use crate::registry::Registry;

/// Default `delta`.
pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrivacyDetail {
    /// Order achieving the RDP conversion minimum.
    Rdp { order: f64 },
    Tcdp { rho: f64, omega: f64 },
}

/// Serialises to the `privacy.json` layout: `epsilon`, `delta`,
/// `accountant`, `detail`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub accountant: String,
    pub detail: PrivacyDetail,
}

/// Running privacy ledger fed by the training loop.
pub trait PrivacyAccountant: Send + Sync {
    fn kind(&self) -> &'static str;

    /// `steps` releases at the given sampling rate and noise multiplier.
    fn record_steps(&mut self, sampling_rate: f64, noise_multiplier: f64, steps: u64) -> Result<()>;

    fn record_epoch_end(&mut self);

    fn epochs(&self) -> usize;

    fn report(&self, delta: f64) -> Result<PrivacyReport>;

    fn boxed_clone(&self) -> Box<dyn PrivacyAccountant>;

    /// Downcast hook for inspecting a concrete accountant.
    fn as_tcdp(&self) -> Option<&TcdpAccountant> {
        None
    }
}

/// Everything an accountant factory may need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountantSetup {
    pub lot_size: usize,
    pub dataset_size: usize,
    pub clip: f64,
    pub decay: f64,
    pub sigma0: f64,
    pub delta: f64,
}

pub type AccountantFactory = Arc<dyn Fn(&AccountantSetup) -> Result<Box<dyn PrivacyAccountant>> + Send + Sync>;

/// Registry with `rdp` and `tcdp`.
pub fn registry() -> Registry<AccountantFactory> {
    let mut reg: Registry<AccountantFactory> = Registry::new("accountant");
    reg.register(
        "rdp",
        Arc::new(|_: &AccountantSetup| Ok(Box::new(RdpAccountant::new()) as Box<dyn PrivacyAccountant>)),
    );
    reg.register(
        "tcdp",
        Arc::new(|s: &AccountantSetup| {
            let params = TcdpParams {
                batch_size: s.lot_size,
                dataset_size: s.dataset_size,
                clip: s.clip,
                decay: s.decay,
                epochs: 1,
                sigma0: s.sigma0,
                delta: s.delta,
            };
            Ok(Box::new(TcdpAccountant::new(params)?) as Box<dyn PrivacyAccountant>)
        }),
    );
    reg
}
