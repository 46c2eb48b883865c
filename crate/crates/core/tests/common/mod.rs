//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dpadam_core::model::{Batch, Model, ModelParams};

/// Central-difference gradient of the summed weighted loss of `batch`.
pub fn finite_difference(model: &dyn Model, params: &ModelParams, batch: &Batch, h: f64) -> Vec<f64> {
    let loss = |p: &ModelParams| -> f64 {
        let mut scratch = vec![0.0; p.len()];
        (0..batch.len())
            .map(|i| {
                scratch.iter_mut().for_each(|g| *g = 0.0);
                model
                    .backprop_row(p, batch.features().row(i), batch.labels()[i], batch.weight(i), &mut scratch)
                    .unwrap()
            })
            .sum()
    };
    let mut out = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[j] += h;
        let mut minus = params.clone();
        minus.values_mut()[j] -= h;
        out.push((loss(&plus) - loss(&minus)) / (2.0 * h));
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Gradient of `w * CE(softmax(0, w.x + b), y)` for the logistic model,
/// written out by hand: `w * (sigmoid(s) - y) * [x, 1]`.
pub fn logistic_grad(theta: &[f64], x: &[f64], y: usize, weight: f64) -> Vec<f64> {
    let d = x.len();
    let s: f64 = theta[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + theta[d];
    let p = 1.0 / (1.0 + (-s).exp());
    let r = weight * (p - y as f64);
    let mut g: Vec<f64> = x.iter().map(|xi| r * xi).collect();
    g.push(r);
    g
}

/// Warmup then cosine anneal, expressed through the phase angle.
pub fn schedule(step: u64, total: u64) -> f64 {
    let (start, end, warm) = (0.04, 1e-4, 0.3);
    if step == total {
        return end;
    }
    let pct = step as f64 / total as f64;
    if pct <= warm {
        start + (1.0 - start) * pct / warm
    } else {
        let angle = std::f64::consts::PI * (pct - warm) / (1.0 - warm);
        end + (1.0 - end) * (1.0 + angle.cos()) / 2.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub wd: f64,
}

/// Plain, non-private optimizers with their own moment bookkeeping.
pub struct RefOptimizer {
    kind: &'static str,
    hp: RefHyper,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl RefOptimizer {
    pub fn new(kind: &'static str, hp: RefHyper, n: usize) -> Self {
        Self {
            kind,
            hp,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], eta: f64) {
        let h = self.hp;
        self.t += 1;
        let bc1 = 1.0 - h.beta1.powi(self.t);
        let bc2 = 1.0 - h.beta2.powi(self.t);
        for i in 0..theta.len() {
            let old = theta[i];
            match self.kind {
                "sgd" => theta[i] = old - eta * h.lr * (grad[i] + h.wd * old),
                "rmsprop" => {
                    let g = grad[i] + h.wd * old;
                    self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
                    theta[i] = old - eta * h.lr * g / ((self.v[i] / bc2).sqrt() + h.eps);
                }
                "adam" | "adamw" => {
                    let g = if self.kind == "adam" { grad[i] + h.wd * old } else { grad[i] };
                    self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g;
                    self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
                    let step = h.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + h.eps);
                    let decay = if self.kind == "adamw" { h.wd * old } else { 0.0 };
                    theta[i] = old - eta * (step + decay);
                }
                other => panic!("no reference for {other}"),
            }
        }
    }
}

/// Deterministic pseudo-data for small tests.
pub fn toy_rows(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = usize::from(i % 5 < 3);
        let shift = if y == 1 { 0.7 } else { -0.7 };
        rows.push((0..d).map(|_| next() + shift).collect());
        labels.push(y);
    }
    (rows, labels)
}

/// Max per-coordinate gap between the DP pipeline run without noise or
/// clipping and the reference optimizer, over a `steps`-step trajectory on
/// logistic regression. Also checks that the full training loop lands on
/// the same final parameters as the step-by-step replay.
pub fn trajectory_gap(kind: &'static str, steps: u64) -> f64 {
    use dpadam_core::accountant::RdpAccountant;
    use dpadam_core::model::{loss_and_per_example_grads, Logistic, Matrix};
    use dpadam_core::optim::{self, one_cycle_multiplier, optimizer_step, privatize, DpHyperParams, DpOptimizerState, TrainContext};
    use dpadam_core::rng::{stream, Domain};
    use dpadam_core::sampling::{LotSampler, ShuffleSampler};

    let (n, lot, d) = (60usize, 12usize, 4usize);
    let (rows, labels) = toy_rows(n, d, 5);
    let data = Batch::new(Matrix::from_rows(&rows).unwrap(), labels, None).unwrap();
    let model = Logistic::new(d).unwrap();
    let sampler = ShuffleSampler::new(n, lot).unwrap();
    let per_epoch = sampler.lots_per_epoch() as u64;
    assert_eq!(steps % per_epoch, 0);
    let hp = DpHyperParams {
        clip_norm: f64::INFINITY,
        noise_multiplier: 0.0,
        lot_size: lot,
        learning_rate: 0.05,
        weight_decay: 0.01,
        optimizer: kind.into(),
        ..DpHyperParams::default()
    };
    let rule = optim::registry().get(kind).unwrap().clone();
    let init = model.init_params(&mut stream(3, Domain::Init, &[]));

    let mut params = init.clone();
    let mut state = DpOptimizerState::new(params.len(), 0.0);
    let mut reference = init.values().to_vec();
    let mut ref_opt = RefOptimizer::new(
        kind,
        RefHyper {
            lr: hp.learning_rate,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.stabilizer,
            wd: hp.weight_decay,
        },
        reference.len(),
    );
    let mut worst: f64 = 0.0;
    let mut step = 0u64;
    for epoch in 0..(steps / per_epoch) as usize {
        for lot_idx in sampler.epoch_lots(9, epoch) {
            let batch = data.select(&lot_idx).unwrap();
            let per = loss_and_per_example_grads(&model, &params, &batch).unwrap();
            let g = privatize(&per.grads, hp.clip_norm, 0.0, lot, &mut stream(0, Domain::Noise, &[step])).unwrap();
            let eta = one_cycle_multiplier(step, steps).unwrap();
            let mut theta = params.values().to_vec();
            optimizer_step(rule.as_ref(), &mut state, &mut theta, &g, &hp, eta).unwrap();
            params.values_mut().copy_from_slice(&theta);

            let mut rg = vec![0.0; reference.len()];
            for &i in &lot_idx {
                for (a, b) in rg.iter_mut().zip(logistic_grad(&reference, &rows[i], data.labels()[i], 1.0)) {
                    *a += b;
                }
            }
            rg.iter_mut().for_each(|v| *v /= lot as f64);
            ref_opt.step(&mut reference, &rg, schedule(step, steps));

            for (a, b) in params.values().iter().zip(&reference) {
                worst = worst.max((a - b).abs());
            }
            step += 1;
        }
    }

    let mut looped = init.clone();
    let mut loop_state = DpOptimizerState::new(looped.len(), 0.0);
    let trainable: Vec<usize> = (0..looped.len()).collect();
    let ctx = TrainContext {
        model: &model,
        rule: rule.as_ref(),
        sampler: &sampler,
        data: &data,
        hp: &hp,
        trainable: &trainable,
        seed: 9,
        total_steps: steps,
        delta: 1e-5,
        epsilon_cap: None,
        check_clipping: true,
        private: true,
    };
    optim::train(&ctx, (steps / per_epoch) as usize, &mut looped, &mut loop_state, &mut RdpAccountant::new()).unwrap();
    assert_eq!(looped, params, "training loop diverged from the step-by-step replay");
    worst
}
