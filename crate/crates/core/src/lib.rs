//! Differentially private training toolkit.
//!
//! The crate is organised around small registries of interchangeable
//! strategies, each selected by name at runtime:
//!
//! * [`model`]: differentiable classifiers (`logistic`, `mlp`) with exact
//!   per-example gradients.
//! * [`optim`]: per-sample clipping, Gaussian privatization, noise decay,
//!   the one-cycle schedule and the update rules (`sgd`, `rmsprop`, `adam`,
//!   `adamw`).
//! * [`accountant`]: Rényi divergences, the RDP and tCDP accountants
//!   (`rdp`, `tcdp`) and noise calibration.
//! * [`sampling`]: Poisson lots, uniform shuffling, the weighted random
//!   sampler and class weights.
//! * [`metrics`]: accuracy, precision, recall, F1 and ROC AUC.
//! * [`harness`]: synthetic data, run configuration, single experiments and
//!   hyperparameter sweeps.

pub mod accountant;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod registry;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
