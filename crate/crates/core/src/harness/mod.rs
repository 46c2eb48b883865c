//! Experiment harness: data, configuration, single runs and sweeps.

mod config;
mod data;
mod experiment;
mod stats;
mod sweep;

pub use config::{parse_kv, DataSource, Imbalance, NoiseTarget, RunConfig, DEFAULT_SYNTH, KEYS};
pub use data::{
    load_columnar, parse_columnar, split_dataset, synth_dataset, to_columnar, Dataset, SynthSpec, DEFAULT_CLASS_RATIO,
    MINORITY_CLASS, SPLIT_FRACTIONS,
};
pub use experiment::{
    load_dataset, plan_privacy, resolve_sigma, run_experiment, run_on, PrivacyPlan, RunOutcome, POSITIVE_CLASS,
};
pub use stats::{ranks, spearman, Spearman};
pub use sweep::{
    default_values, row_noise, run_sweep, MeanMetrics, SweepParam, SweepReport, SweepRow, Variant, VariantSummary,
};
