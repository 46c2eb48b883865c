use std::sync::Arc;

use super::{DpHyperParams, DpOptimizerState};
use crate::registry::Registry;

/// A parameter update driven by an already privatized gradient.
///
/// `state.t` has been incremented when `apply` runs. `eta` is the schedule
/// multiplier; it scales the whole update, including `learning_rate`.
pub trait UpdateRule: Send + Sync {
    fn name(&self) -> &'static str;

    fn apply(&self, state: &mut DpOptimizerState, params: &mut [f64], grad: &[f64], hp: &DpHyperParams, eta: f64);
}

/// `theta -= eta * alpha * (g + lambda * theta)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sgd;

/// Bias-corrected second moment only.
#[derive(Debug, Clone, Copy, Default)]
pub struct RmsProp;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct Adam;

/// Adam with decoupled weight decay `eta * lambda * theta_prev`, not scaled
/// by the learning rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdamW;

fn coupled(g: f64, theta: f64, hp: &DpHyperParams) -> f64 {
    g + hp.weight_decay * theta
}

fn adam_direction(state: &mut DpOptimizerState, i: usize, g: f64, hp: &DpHyperParams) -> f64 {
    let t = state.t as i32;
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    let m_hat = state.m[i] / (1.0 - hp.beta1.powi(t));
    let v_hat = state.v[i] / (1.0 - hp.beta2.powi(t));
    m_hat / (v_hat.sqrt() + hp.stabilizer)
}

impl UpdateRule for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn apply(&self, _state: &mut DpOptimizerState, params: &mut [f64], grad: &[f64], hp: &DpHyperParams, eta: f64) {
        for (theta, &g) in params.iter_mut().zip(grad) {
            *theta -= eta * hp.learning_rate * coupled(g, *theta, hp);
        }
    }
}

impl UpdateRule for RmsProp {
    fn name(&self) -> &'static str {
        "rmsprop"
    }

    fn apply(&self, state: &mut DpOptimizerState, params: &mut [f64], grad: &[f64], hp: &DpHyperParams, eta: f64) {
        let correction = 1.0 - hp.beta2.powi(state.t as i32);
        for (i, (theta, &g)) in params.iter_mut().zip(grad).enumerate() {
            let g = coupled(g, *theta, hp);
            state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
            let v_hat = state.v[i] / correction;
            *theta -= eta * hp.learning_rate * g / (v_hat.sqrt() + hp.stabilizer);
        }
    }
}

impl UpdateRule for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn apply(&self, state: &mut DpOptimizerState, params: &mut [f64], grad: &[f64], hp: &DpHyperParams, eta: f64) {
        for (i, (theta, &g)) in params.iter_mut().zip(grad).enumerate() {
            let dir = adam_direction(state, i, coupled(g, *theta, hp), hp);
            *theta -= eta * hp.learning_rate * dir;
        }
    }
}

impl UpdateRule for AdamW {
    fn name(&self) -> &'static str {
        "adamw"
    }

    fn apply(&self, state: &mut DpOptimizerState, params: &mut [f64], grad: &[f64], hp: &DpHyperParams, eta: f64) {
        for (i, (theta, &g)) in params.iter_mut().zip(grad).enumerate() {
            let prev = *theta;
            let dir = adam_direction(state, i, g, hp);
            *theta = prev - eta * (hp.learning_rate * dir + hp.weight_decay * prev);
        }
    }
}

/// Registry with `sgd`, `rmsprop`, `adam` and `adamw`.
pub fn registry() -> Registry<Arc<dyn UpdateRule>> {
    let mut reg: Registry<Arc<dyn UpdateRule>> = Registry::new("optimizer");
    reg.register("sgd", Arc::new(Sgd))
        .register("rmsprop", Arc::new(RmsProp))
        .register("adam", Arc::new(Adam))
        .register("adamw", Arc::new(AdamW));
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_and_adamw_agree_without_decay() {
        let hp = DpHyperParams {
            weight_decay: 0.0,
            learning_rate: 0.01,
            ..Default::default()
        };
        let grads = [[0.5, -0.1], [0.2, 0.3], [-1.0, 0.7], [0.05, 0.0]];
        let run = |rule: &dyn UpdateRule| {
            let mut s = DpOptimizerState::new(2, 0.0);
            let mut p = vec![0.1, -0.2];
            for (k, g) in grads.iter().enumerate() {
                super::super::optimizer_step(rule, &mut s, &mut p, g, &hp, 0.5 + 0.1 * k as f64).unwrap();
            }
            (p, s)
        };
        let (pa, sa) = run(&Adam);
        let (pw, sw) = run(&AdamW);
        assert_eq!(pa, pw);
        assert_eq!(sa, sw);
    }

    #[test]
    fn decoupled_decay_differs_from_coupled() {
        let hp = DpHyperParams {
            weight_decay: 0.1,
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut a = (DpOptimizerState::new(1, 0.0), vec![1.0]);
        let mut w = (DpOptimizerState::new(1, 0.0), vec![1.0]);
        super::super::optimizer_step(&Adam, &mut a.0, &mut a.1, &[0.0], &hp, 1.0).unwrap();
        super::super::optimizer_step(&AdamW, &mut w.0, &mut w.1, &[0.0], &hp, 1.0).unwrap();
        // AdamW: pure shrink by eta * lambda
        assert!((w.1[0] - 0.9).abs() < 1e-15);
        // Adam: the decay term goes through the normalised moment
        assert!((a.1[0] - (1.0 - 0.01 * 0.1 / (0.1 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let hp = DpHyperParams::default();
        for rule in [&RmsProp as &dyn UpdateRule, &Adam, &AdamW] {
            let mut s = DpOptimizerState::new(3, 0.0);
            let mut p = vec![0.0; 3];
            for k in 0..50 {
                let g = [(k as f64).sin(), -(k as f64) * 1e3, 1e-12];
                super::super::optimizer_step(rule, &mut s, &mut p, &g, &hp, 1.0).unwrap();
                assert!(s.v.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
