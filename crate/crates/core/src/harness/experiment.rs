//! A single configured training run.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, Imbalance, NoiseTarget, RunConfig};
use super::data::{load_columnar, synth_dataset, Dataset};
use crate::accountant::{self, calibrate_sigma, AccountantSetup, CalibrationTarget, PrivacyReport};
use crate::error::{invalid, Result};
use crate::metrics::{evaluate, EvalResult, DEFAULT_THRESHOLD};
use crate::model::{self, predict_proba, trainable_indices, ModelOptions};
use crate::optim::{self, train, DpOptimizerState, EpochStats, TrainContext};
use crate::rng::{self, Domain};
use crate::sampling::{self, per_sample_class_weights, LotSampler};

/// Class treated as positive by precision, recall and AUC.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub eval: EvalResult,
    /// `None` for runs without noise, which carry no guarantee.
    pub privacy: Option<PrivacyReport>,
    /// Initial noise multiplier, calibrated or given.
    pub sigma0: f64,
    /// Noise multiplier in force when training stopped.
    pub final_sigma: f64,
    /// The sampler does not match the accountant's Poisson assumption, so
    /// the reported epsilon is nominal.
    pub nominal_epsilon: bool,
    pub epochs: Vec<EpochStats>,
    /// `(projected, cap)` if an epsilon cap ended training early.
    pub halted: Option<(f64, f64)>,
    pub config_hash: String,
    pub wall_time_secs: f64,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(spec) => synth_dataset(*spec, cfg.seed),
        DataSource::File(path) => load_columnar(path, cfg.seed),
    }
}

fn build_sampler(cfg: &RunConfig, labels: &[usize]) -> Result<Box<dyn LotSampler>> {
    let name = if cfg.imbalance == Imbalance::Wrs { "wrs" } else { cfg.sampler.as_str() };
    (sampling::registry().get(name)?)(labels, cfg.lot_size)
}

/// Noise multiplier for the run: given directly, or calibrated so the
/// configured accountant reports the target epsilon.
pub fn resolve_sigma(cfg: &RunConfig, sampler: &dyn LotSampler, dataset_size: usize) -> Result<f64> {
    if !cfg.private {
        return Ok(0.0);
    }
    match cfg.noise {
        NoiseTarget::Sigma(s) => {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("sigma must be finite and nonnegative, got {s}")));
            }
            Ok(s)
        }
        NoiseTarget::Epsilon(eps) => {
            let epochs = u32::try_from(cfg.epochs).map_err(|_| invalid("too many epochs"))?;
            let decay = if cfg.adaptive { cfg.decay } else { 1.0 };
            let target = match cfg.accountant.as_str() {
                "rdp" => CalibrationTarget::Rdp {
                    sampling_rate: sampler.sampling_rate(),
                    steps_per_epoch: sampler.lots_per_epoch() as u64,
                    epochs,
                    decay,
                },
                "tcdp" => CalibrationTarget::Tcdp {
                    batch_size: cfg.lot_size,
                    dataset_size,
                    clip: cfg.clip,
                    decay: cfg.decay,
                    epochs,
                },
                other => {
                    // surfaces the registry's list of names
                    accountant::registry().get(other)?;
                    return Err(invalid(format!("no calibration for accountant `{other}`")));
                }
            };
            Ok(calibrate_sigma(eps, cfg.delta, &target)?.sigma)
        }
    }
}

/// Train and evaluate on an already loaded dataset.
pub fn run_on(cfg: &RunConfig, data: &Dataset) -> Result<RunOutcome> {
    let started = Instant::now();
    if cfg.epochs == 0 {
        return Err(invalid("epochs must be at least 1"));
    }
    let model = model::build(
        &cfg.model,
        ModelOptions {
            input_dim: data.input_dim(),
            hidden: cfg.hidden,
        },
    )?;
    let rule = optim::registry().get(&cfg.optimizer)?.clone();
    let sampler = build_sampler(cfg, data.train.labels())?;

    let train_set = match cfg.imbalance {
        Imbalance::Cw => data
            .train
            .clone()
            .with_sample_weights(Some(per_sample_class_weights(data.train.labels())?))?,
        _ => data.train.clone(),
    };

    let sigma0 = resolve_sigma(cfg, sampler.as_ref(), train_set.len())?;
    let mut hp = cfg.hyper_params(sigma0);
    if !cfg.private {
        hp.clip_norm = f64::INFINITY;
    }
    hp.validate()?;
    let with_noise = cfg.private && sigma0 > 0.0;

    let mut accountant = (accountant::registry().get(&cfg.accountant)?)(&AccountantSetup {
        lot_size: cfg.lot_size,
        dataset_size: train_set.len(),
        clip: if cfg.clip.is_finite() { cfg.clip } else { 1.0 },
        decay: cfg.decay,
        sigma0: if with_noise { sigma0 } else { 1.0 },
        delta: cfg.delta,
    })?;

    let mut params = model.init_params(&mut rng::stream(cfg.seed, Domain::Init, &[]));
    let trainable = trainable_indices(model.as_ref(), &params, cfg.trainable_layers)?;
    let mut state = DpOptimizerState::new(trainable.len(), sigma0);
    let ctx = TrainContext {
        model: model.as_ref(),
        rule: rule.as_ref(),
        sampler: sampler.as_ref(),
        data: &train_set,
        hp: &hp,
        trainable: &trainable,
        seed: cfg.seed,
        total_steps: (cfg.epochs * sampler.lots_per_epoch()) as u64,
        delta: cfg.delta,
        epsilon_cap: if with_noise { cfg.epsilon_cap } else { None },
        check_clipping: cfg.check_clipping,
        private: cfg.private,
    };
    let outcome = train(&ctx, cfg.epochs, &mut params, &mut state, accountant.as_mut())?;

    let probs = predict_proba(model.as_ref(), &params, data.test.features())?;
    let positive: Vec<f64> = probs.iter_rows().map(|r| r[POSITIVE_CLASS]).collect();
    let eval = evaluate(data.test.labels(), &positive, POSITIVE_CLASS, DEFAULT_THRESHOLD)?;
    let privacy = if with_noise { Some(accountant.report(cfg.delta)?) } else { None };

    Ok(RunOutcome {
        eval,
        privacy,
        sigma0,
        final_sigma: state.sigma_t(),
        nominal_epsilon: with_noise && !sampler.amplification_modeled(),
        epochs: outcome.epochs,
        halted: outcome.halted,
        config_hash: cfg.hash(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyPlan {
    pub sigma0: f64,
    /// What the accountant will report once every epoch has run.
    pub report: PrivacyReport,
    pub nominal_epsilon: bool,
}

/// Resolve the noise level and replay the accountant over the full
/// schedule without training.
pub fn plan_privacy(cfg: &RunConfig) -> Result<PrivacyPlan> {
    let data = load_dataset(cfg)?;
    let sampler = build_sampler(cfg, data.train.labels())?;
    let n = data.train.len();
    let sigma0 = resolve_sigma(cfg, sampler.as_ref(), n)?;
    if !(sigma0 > 0.0) {
        return Err(invalid("a run without noise has no privacy guarantee to plan"));
    }
    let mut acc = (accountant::registry().get(&cfg.accountant)?)(&AccountantSetup {
        lot_size: cfg.lot_size,
        dataset_size: n,
        clip: cfg.clip,
        decay: cfg.decay,
        sigma0,
        delta: cfg.delta,
    })?;
    let mut sigma_sq = sigma0 * sigma0;
    for _ in 0..cfg.epochs {
        acc.record_steps(sampler.sampling_rate(), sigma_sq.sqrt(), sampler.lots_per_epoch() as u64)?;
        acc.record_epoch_end();
        if cfg.adaptive {
            sigma_sq = optim::decay_noise(sigma_sq, cfg.decay);
        }
    }
    Ok(PrivacyPlan {
        sigma0,
        report: acc.report(cfg.delta)?,
        nominal_epsilon: !sampler.amplification_modeled(),
    })
}

/// Load or synthesise the data, calibrate, train and evaluate.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let data = load_dataset(cfg)?;
    run_on(cfg, &data)
}
