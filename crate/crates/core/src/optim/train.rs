use serde::{Deserialize, Serialize};

use super::{decay_noise, one_cycle_multiplier, optimizer_step, privatize_with_stats, DpHyperParams, DpOptimizerState, UpdateRule};
use crate::accountant::PrivacyAccountant;
use crate::error::{invalid, Error, Result};
use crate::model::{loss_and_per_example_grads, Batch, Matrix, Model, ModelParams};
use crate::rng::{self, Domain};
use crate::sampling::LotSampler;

/// Everything a training epoch reads but does not modify.
pub struct TrainContext<'a> {
    pub model: &'a dyn Model,
    pub rule: &'a dyn UpdateRule,
    pub sampler: &'a dyn LotSampler,
    pub data: &'a Batch,
    pub hp: &'a DpHyperParams,
    /// Flat indices of the parameters being trained, ascending.
    pub trainable: &'a [usize],
    pub seed: u64,
    /// Length of the one-cycle schedule, in lots.
    pub total_steps: u64,
    pub delta: f64,
    /// Stop before an epoch that would push epsilon past this value.
    pub epsilon_cap: Option<f64>,
    /// Fail the step if any clipped per-sample norm exceeds `S`.
    pub check_clipping: bool,
    /// `false` trains on the plain lot gradient: no clipping, no noise.
    pub private: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Optimizer steps taken (non-empty lots).
    pub steps: u64,
    pub skipped_lots: u64,
    pub samples_seen: u64,
    pub mean_loss: f64,
    pub max_post_clip_norm: f64,
    pub clipped_rows: u64,
    /// Noise variance multiplier after the end-of-epoch decay.
    pub sigma_sq_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    /// Set when the epsilon cap stopped training early.
    pub halted: Option<(f64, f64)>,
}

fn gather(src: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| src[i]).collect()
}

fn project_rows(grads: &Matrix, idx: &[usize]) -> Matrix {
    if idx.len() == grads.cols() {
        return grads.clone();
    }
    let mut out = Matrix::zeros(grads.rows(), idx.len());
    for r in 0..grads.rows() {
        let src = grads.row(r);
        for (o, &i) in out.row_mut(r).iter_mut().zip(idx) {
            *o = src[i];
        }
    }
    out
}

/// One pass over `sampler.lots_per_epoch()` lots.
///
/// Per lot: per-example gradients, clip, sum, add noise, divide by `L`,
/// update. The accountant is told about every lot, empty or not, at the
/// epoch's noise level. Adaptive runs decay the noise variance once the
/// epoch is over.
pub fn train_epoch(
    ctx: &TrainContext<'_>,
    epoch: usize,
    params: &mut ModelParams,
    state: &mut DpOptimizerState,
    accountant: &mut dyn PrivacyAccountant,
) -> Result<EpochStats> {
    let hp = ctx.hp;
    let lots = ctx.sampler.epoch_lots(ctx.seed, epoch);
    let lots_per_epoch = lots.len() as u64;
    // noiseless steps give no guarantee, so there is nothing to account
    let noisy = ctx.private && state.sigma_sq_t > 0.0;
    if noisy {
        accountant.record_steps(ctx.sampler.sampling_rate(), state.sigma_t(), lots_per_epoch)?;
    }

    let mut stats = EpochStats {
        epoch,
        steps: 0,
        skipped_lots: 0,
        samples_seen: 0,
        mean_loss: 0.0,
        max_post_clip_norm: 0.0,
        clipped_rows: 0,
        sigma_sq_t: state.sigma_sq_t,
    };
    let mut loss_sum = 0.0;

    for (k, lot) in lots.iter().enumerate() {
        let step = epoch as u64 * lots_per_epoch + k as u64;
        if lot.is_empty() {
            stats.skipped_lots += 1;
            continue;
        }
        let batch = ctx.data.select(lot)?;
        let grad = if ctx.private {
            let per_example = loss_and_per_example_grads(ctx.model, params, &batch)?;
            let grads = project_rows(&per_example.grads, ctx.trainable);
            let mut noise_rng = rng::stream(ctx.seed, Domain::Noise, &[epoch as u64, k as u64]);
            let private = privatize_with_stats(&grads, hp.clip_norm, state.sigma_sq_t, hp.lot_size, &mut noise_rng)?;
            if ctx.check_clipping && private.max_post_clip_norm > hp.clip_norm {
                return Err(invalid(format!(
                    "post-clip norm {} exceeds bound {} at step {step}",
                    private.max_post_clip_norm, hp.clip_norm
                )));
            }
            stats.clipped_rows += private.clipped_rows as u64;
            stats.max_post_clip_norm = stats.max_post_clip_norm.max(private.max_post_clip_norm);
            loss_sum += per_example.loss_values.iter().sum::<f64>();
            private.grad
        } else {
            // batch form returns means; rescale to the sum over nominal L
            let (loss, full) = ctx.model.batch_loss_and_grad(params, &batch)?;
            let n = batch.len() as f64;
            loss_sum += loss * n;
            ctx.trainable.iter().map(|&i| full[i] * n / hp.lot_size as f64).collect()
        };

        let eta = one_cycle_multiplier(step.min(ctx.total_steps), ctx.total_steps)?;
        let mut theta = gather(params.values(), ctx.trainable);
        optimizer_step(ctx.rule, state, &mut theta, &grad, hp, eta)?;
        let values = params.values_mut();
        for (&i, v) in ctx.trainable.iter().zip(theta) {
            values[i] = v;
        }
        state.schedule_pos = (step + 1) as f64 / ctx.total_steps as f64;

        stats.steps += 1;
        stats.samples_seen += lot.len() as u64;
    }

    if hp.adaptive {
        state.sigma_sq_t = decay_noise(state.sigma_sq_t, hp.decay);
        state.decay_applications += 1;
    }
    if noisy {
        accountant.record_epoch_end();
    }
    stats.sigma_sq_t = state.sigma_sq_t;
    stats.mean_loss = if stats.samples_seen > 0 {
        loss_sum / stats.samples_seen as f64
    } else {
        0.0
    };
    Ok(stats)
}

/// Run `epochs` epochs, stopping early if the epsilon cap would be crossed.
pub fn train(
    ctx: &TrainContext<'_>,
    epochs: usize,
    params: &mut ModelParams,
    state: &mut DpOptimizerState,
    accountant: &mut dyn PrivacyAccountant,
) -> Result<TrainOutcome> {
    if state.m.len() != ctx.trainable.len() {
        return Err(Error::Shape(format!(
            "optimizer state has {} entries for {} trainable parameters",
            state.m.len(),
            ctx.trainable.len()
        )));
    }
    let mut out = TrainOutcome {
        epochs: Vec::with_capacity(epochs),
        halted: None,
    };
    for epoch in 0..epochs {
        if let Some(cap) = ctx.epsilon_cap {
            let mut probe = accountant.boxed_clone();
            probe.record_steps(ctx.sampler.sampling_rate(), state.sigma_t(), ctx.sampler.lots_per_epoch() as u64)?;
            probe.record_epoch_end();
            let projected = probe.report(ctx.delta)?.epsilon;
            if projected > cap {
                out.halted = Some((projected, cap));
                break;
            }
        }
        out.epochs.push(train_epoch(ctx, epoch, params, state, accountant)?);
    }
    Ok(out)
}
