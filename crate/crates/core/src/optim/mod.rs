//! Private gradient aggregation and the DP optimizer family.
//!
//! One training step is: per-example gradients, clip each row to norm `S`,
//! sum, add one Gaussian vector `N(0, sigma_t^2 S^2 I)`, divide by the
//! nominal lot size `L`, then hand the result to an [`UpdateRule`].

mod rules;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use rules::{registry, Adam, AdamW, RmsProp, Sgd, UpdateRule};
pub use train::{train, train_epoch, EpochStats, TrainContext, TrainOutcome};

use crate::error::{invalid, Error, Result};
use crate::model::Matrix;

/// Fraction of the schedule spent ramping up.
pub const ONE_CYCLE_WARMUP: f64 = 0.3;
/// Multiplier at step 0.
pub const ONE_CYCLE_START: f64 = 1.0 / 25.0;
/// Multiplier at the final step.
pub const ONE_CYCLE_END: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpHyperParams {
    /// Per-sample l2 bound `S`. `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    /// Initial noise multiplier `sigma_0`.
    pub noise_multiplier: f64,
    pub lot_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub stabilizer: f64,
    pub weight_decay: f64,
    /// Per-epoch noise variance decay `R`.
    pub decay: f64,
    pub optimizer: String,
    pub adaptive: bool,
}

impl Default for DpHyperParams {
    fn default() -> Self {
        Self {
            clip_norm: 10.0,
            noise_multiplier: 1.0,
            lot_size: 64,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            stabilizer: 1e-8,
            weight_decay: 1e-6,
            decay: 0.99,
            optimizer: "adamw".into(),
            adaptive: false,
        }
    }
}

impl DpHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(invalid(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(invalid("noise multiplier must be finite and nonnegative"));
        }
        if self.clip_norm.is_infinite() && self.noise_multiplier > 0.0 {
            return Err(invalid("unbounded clip norm requires zero noise"));
        }
        if self.lot_size == 0 {
            return Err(invalid("lot size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("betas must lie in [0, 1)"));
        }
        if !(self.stabilizer > 0.0) {
            return Err(invalid("stabilizer must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight decay must be nonnegative"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(invalid(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        Ok(())
    }

    /// Decay actually applied at epoch ends: `R` if adaptive, else 1.
    pub fn effective_decay(&self) -> f64 {
        if self.adaptive {
            self.decay
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpOptimizerState {
    /// Completed optimizer steps.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Current noise variance multiplier `sigma_t^2`.
    pub sigma_sq_t: f64,
    /// Fraction of the schedule elapsed.
    pub schedule_pos: f64,
    pub decay_applications: u32,
}

impl DpOptimizerState {
    pub fn new(num_params: usize, noise_multiplier: f64) -> Self {
        Self {
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            sigma_sq_t: noise_multiplier * noise_multiplier,
            schedule_pos: 0.0,
            decay_applications: 0,
        }
    }

    pub fn sigma_t(&self) -> f64 {
        self.sigma_sq_t.sqrt()
    }
}

fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `g / max(1, |g|/S)`. The returned norm never exceeds `S`, even after
/// rounding.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, clip_norm)?;
    Ok(out)
}

/// Clip in place and return the post-clip norm.
pub fn clip_in_place(g: &mut [f64], clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(invalid("clip norm must be positive"));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(invalid("cannot clip a non-finite gradient"));
    }
    let norm = l2_norm(g);
    if norm <= clip_norm {
        return Ok(norm);
    }
    let mut factor = clip_norm / norm;
    let scaled = |f: f64| g.iter().map(|x| x * f).collect::<Vec<_>>();
    let mut out = scaled(factor);
    let mut n = l2_norm(&out);
    while n > clip_norm {
        factor *= 1.0 - f64::EPSILON;
        out = scaled(factor);
        n = l2_norm(&out);
    }
    g.copy_from_slice(&out);
    Ok(n)
}

/// Output of [`privatize_with_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct Privatized {
    pub grad: Vec<f64>,
    /// Largest per-sample norm after clipping.
    pub max_post_clip_norm: f64,
    /// Rows whose norm exceeded `S`.
    pub clipped_rows: usize,
}

/// `(sum_i clip(g_i, S) + z) / L` with `z ~ N(0, sigma_sq_t S^2 I)`.
///
/// `lot_size` is the nominal `L`, which may differ from the number of rows
/// in a Poisson-sampled lot.
pub fn privatize<R: Rng + ?Sized>(
    grads: &Matrix,
    clip_norm: f64,
    sigma_sq_t: f64,
    lot_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(privatize_with_stats(grads, clip_norm, sigma_sq_t, lot_size, rng)?.grad)
}

pub fn privatize_with_stats<R: Rng + ?Sized>(
    grads: &Matrix,
    clip_norm: f64,
    sigma_sq_t: f64,
    lot_size: usize,
    rng: &mut R,
) -> Result<Privatized> {
    if lot_size == 0 {
        return Err(invalid("lot size must be at least 1"));
    }
    if !(sigma_sq_t >= 0.0) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    let std = sigma_sq_t.sqrt() * clip_norm;
    if sigma_sq_t > 0.0 && !std.is_finite() {
        return Err(invalid("noise with an unbounded clip norm is undefined"));
    }

    let p = grads.cols();
    let mut sum = vec![0.0; p];
    let mut row = vec![0.0; p];
    let mut max_norm = 0.0f64;
    let mut clipped_rows = 0;
    for g in grads.iter_rows() {
        row.copy_from_slice(g);
        let before = l2_norm(&row);
        let after = clip_in_place(&mut row, clip_norm)?;
        if before > clip_norm {
            clipped_rows += 1;
        }
        max_norm = max_norm.max(after);
        for (s, x) in sum.iter_mut().zip(&row) {
            *s += x;
        }
    }
    if sigma_sq_t > 0.0 {
        for s in sum.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *s += std * z;
        }
    }
    let l = lot_size as f64;
    sum.iter_mut().for_each(|s| *s /= l);
    Ok(Privatized {
        grad: sum,
        max_post_clip_norm: max_norm,
        clipped_rows,
    })
}

/// `R * sigma_t^2`.
pub fn decay_noise(sigma_sq_t: f64, decay: f64) -> f64 {
    decay * sigma_sq_t
}

/// One-cycle multiplier: linear ramp from 1/25 to 1 over the first 30% of
/// steps, then cosine annealing down to 1e-4 at `total_steps`.
pub fn one_cycle_multiplier(step: u64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(invalid("one-cycle schedule needs at least one step"));
    }
    if step > total_steps {
        return Err(invalid(format!("step {step} is past the end of a {total_steps}-step schedule")));
    }
    if step == total_steps {
        return Ok(ONE_CYCLE_END);
    }
    let pct = step as f64 / total_steps as f64;
    if pct <= ONE_CYCLE_WARMUP {
        let frac = pct / ONE_CYCLE_WARMUP;
        return Ok(ONE_CYCLE_START + (1.0 - ONE_CYCLE_START) * frac);
    }
    let progress = (pct - ONE_CYCLE_WARMUP) / (1.0 - ONE_CYCLE_WARMUP);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(ONE_CYCLE_END + (1.0 - ONE_CYCLE_END) * cos)
}

/// Apply one update of `rule`. `state.t` is advanced before the rule runs,
/// so bias correction sees `t >= 1`. On a non-finite result nothing is
/// modified.
pub fn optimizer_step(
    rule: &dyn UpdateRule,
    state: &mut DpOptimizerState,
    params: &mut [f64],
    g_tilde: &[f64],
    hp: &DpHyperParams,
    eta: f64,
) -> Result<()> {
    if params.len() != g_tilde.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer state for {} params, {} params, {} gradient entries",
            state.m.len(),
            params.len(),
            g_tilde.len()
        )));
    }
    let mut next_state = state.clone();
    let mut next_params = params.to_vec();
    next_state.t += 1;
    rule.apply(&mut next_state, &mut next_params, g_tilde, hp, eta);
    let finite = next_params.iter().chain(&next_state.m).chain(&next_state.v).all(|x| x.is_finite());
    if !finite {
        let max_abs_grad = g_tilde.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        return Err(Error::NonFiniteUpdate {
            step: next_state.t,
            max_abs_grad,
        });
    }
    *state = next_state;
    params.copy_from_slice(&next_params);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn clip_boundary_and_scaling() {
        assert_eq!(clip_gradient(&[3.0, 4.0], 5.0).unwrap(), vec![3.0, 4.0]);
        let c = clip_gradient(&[3.0, 4.0], 1.0).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_gradient(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(clip_gradient(&[1e300, 1e300], f64::INFINITY).unwrap(), vec![1e300, 1e300]);
        assert!(clip_gradient(&[f64::NAN], 1.0).is_err());
        assert!(clip_gradient(&[1.0], 0.0).is_err());
    }

    #[test]
    fn privatize_without_noise() {
        let mut rng = stream(0, Domain::Noise, &[]);
        let one = Matrix::from_rows(&[vec![0.3, -0.2]]).unwrap();
        assert_eq!(privatize(&one, 1.0, 0.0, 1, &mut rng).unwrap(), vec![0.3, -0.2]);
        let two = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(privatize(&two, 1e9, 0.0, 2, &mut rng).unwrap(), vec![0.5, 0.5]);
        assert!(privatize(&two, 1.0, 0.0, 0, &mut rng).is_err());
        assert!(privatize(&two, f64::INFINITY, 1.0, 2, &mut rng).is_err());
    }

    #[test]
    fn privatize_clips_before_summing() {
        let mut rng = stream(0, Domain::Noise, &[]);
        let rows = Matrix::from_rows(&[vec![30.0, 40.0], vec![0.0, 0.5]]).unwrap();
        let out = privatize_with_stats(&rows, 5.0, 0.0, 2, &mut rng).unwrap();
        assert_eq!(out.grad, vec![1.5, 2.25]);
        assert_eq!(out.clipped_rows, 1);
        assert!(out.max_post_clip_norm <= 5.0);
    }

    #[test]
    fn decay_values() {
        assert_eq!(decay_noise(1.0, 0.99), 0.99);
        assert_eq!(decay_noise(3.7, 1.0), 3.7);
        let s = (0..3).fold(8.0, |s, _| decay_noise(s, 0.5));
        assert_eq!(s, 1.0);
    }

    #[test]
    fn one_cycle_anchor_points() {
        assert_eq!(one_cycle_multiplier(0, 1000).unwrap(), 0.04);
        assert_eq!(one_cycle_multiplier(300, 1000).unwrap(), 1.0);
        assert_eq!(one_cycle_multiplier(1000, 1000).unwrap(), 1e-4);
        assert!(one_cycle_multiplier(0, 0).is_err());
        assert!(one_cycle_multiplier(11, 10).is_err());
        let mid = one_cycle_multiplier(650, 1000).unwrap();
        assert!((mid - (1e-4 + (1.0 - 1e-4) * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_unimodal() {
        let vals: Vec<f64> = (0..=200).map(|s| one_cycle_multiplier(s, 200).unwrap()).collect();
        let peak = vals.iter().cloned().fold(0.0, f64::max);
        let at = vals.iter().position(|&v| v == peak).unwrap();
        assert_eq!(at, 60);
        assert!(vals[..=at].windows(2).all(|w| w[0] < w[1]));
        assert!(vals[at..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn adamw_first_step_by_hand() {
        let hp = DpHyperParams {
            learning_rate: 0.001,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut state = DpOptimizerState::new(1, 0.0);
        let mut theta = vec![0.0];
        optimizer_step(&AdamW, &mut state, &mut theta, &[1.0], &hp, 1.0).unwrap();
        assert_eq!(state.t, 1);
        assert!((state.m[0] - 0.1).abs() < 1e-15);
        assert!((state.v[0] - 0.001).abs() < 1e-15);
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15, "{}", theta[0]);
    }

    #[test]
    fn zero_gradient_no_decay_leaves_params() {
        let hp = DpHyperParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let reg = registry();
        for name in reg.names() {
            let rule = reg.get(name).unwrap();
            let mut state = DpOptimizerState::new(3, 1.0);
            let mut theta = vec![0.5, -1.0, 2.0];
            for _ in 0..5 {
                optimizer_step(rule.as_ref(), &mut state, &mut theta, &[0.0; 3], &hp, 1.0).unwrap();
            }
            assert_eq!(theta, vec![0.5, -1.0, 2.0], "{name}");
        }
    }

    #[test]
    fn bias_corrected_first_moment_equals_gradient_after_one_step() {
        let hp = DpHyperParams::default();
        let g = [0.37, -1.25, 4.0];
        let mut state = DpOptimizerState::new(3, 0.0);
        let mut theta = vec![0.0; 3];
        optimizer_step(&Adam, &mut state, &mut theta, &g, &DpHyperParams { weight_decay: 0.0, ..hp }, 1.0)
            .unwrap();
        for (m, gi) in state.m.iter().zip(g) {
            let m_hat = m / (1.0 - 0.9);
            assert!((m_hat - gi).abs() <= 4.0 * f64::EPSILON * gi.abs(), "{m_hat} vs {gi}");
        }
    }

    #[test]
    fn non_finite_update_is_rejected_without_side_effects() {
        let hp = DpHyperParams::default();
        let mut state = DpOptimizerState::new(2, 0.0);
        let mut theta = vec![1.0, 2.0];
        let err = optimizer_step(&Sgd, &mut state, &mut theta, &[f64::INFINITY, 0.0], &hp, 1.0).unwrap_err();
        match err {
            Error::NonFiniteUpdate { step, max_abs_grad } => {
                assert_eq!(step, 1);
                assert!(max_abs_grad.is_infinite());
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(theta, vec![1.0, 2.0]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(DpHyperParams::default().validate().is_ok());
        let bad = [
            DpHyperParams { clip_norm: 0.0, ..Default::default() },
            DpHyperParams { lot_size: 0, ..Default::default() },
            DpHyperParams { beta1: 1.0, ..Default::default() },
            DpHyperParams { decay: 0.0, ..Default::default() },
            DpHyperParams { decay: 1.5, ..Default::default() },
            DpHyperParams { clip_norm: f64::INFINITY, ..Default::default() },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }
}
