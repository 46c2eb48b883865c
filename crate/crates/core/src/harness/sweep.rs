//! Hyperparameter sweeps comparing fixed-noise and decaying-noise training.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Imbalance, NoiseTarget, RunConfig};
use super::experiment::{load_dataset, run_on, RunOutcome};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Epsilon,
    Clip,
    NoiseMultiplier,
    Optimizer,
    Imbalance,
    TrainableLayers,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Epsilon,
        SweepParam::Clip,
        SweepParam::NoiseMultiplier,
        SweepParam::Optimizer,
        SweepParam::Imbalance,
        SweepParam::TrainableLayers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::Clip => "clip",
            SweepParam::NoiseMultiplier => "noise_multiplier",
            SweepParam::Optimizer => "optimizer",
            SweepParam::Imbalance => "imbalance",
            SweepParam::TrainableLayers => "trainable_layers",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "Epsilon",
            SweepParam::Clip => "Clip",
            SweepParam::NoiseMultiplier => "Noise multiplier",
            SweepParam::Optimizer => "Optimizer",
            SweepParam::Imbalance => "Imbalance technique",
            SweepParam::TrainableLayers => "Trainable layers",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        let k = if k == "sigma" { "noise_multiplier".to_string() } else { k };
        Self::ALL.into_iter().find(|p| p.as_str() == k).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|p| p.as_str()).collect();
            Error::Parse(format!("unknown sweep parameter `{s}` (known: {})", names.join(", ")))
        })
    }

    /// Write `value` into the swept field of `cfg`.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<()> {
        match self {
            SweepParam::Epsilon => cfg.set("epsilon", value),
            SweepParam::Clip => cfg.set("clip", value),
            SweepParam::NoiseMultiplier => cfg.set("sigma", value),
            SweepParam::Optimizer => cfg.set("optimizer", value),
            SweepParam::Imbalance => cfg.set("imbalance", value),
            SweepParam::TrainableLayers => cfg.set("trainable-layers", value),
        }
    }
}

/// Fixed noise with RDP accounting, or decaying noise with tCDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Dp,
    Adp,
}

impl Variant {
    pub const BOTH: [Variant; 2] = [Variant::Dp, Variant::Adp];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dp => "dp",
            Variant::Adp => "adp",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Variant::Dp),
            "adp" => Ok(Variant::Adp),
            _ => Err(Error::Parse(format!("unknown variant `{s}`"))),
        }
    }

    pub fn configure(self, cfg: &mut RunConfig) {
        match self {
            Variant::Dp => {
                cfg.adaptive = false;
                cfg.accountant = "rdp".into();
            }
            Variant::Adp => {
                cfg.adaptive = true;
                cfg.accountant = "tcdp".into();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
}

/// Seed-averaged result of one variant at one swept value.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    /// `None` marks a variant with no successful seed.
    pub mean: Option<MeanMetrics>,
    /// Test accuracy per seed, in seed order; `None` where the run failed.
    pub seed_accuracies: Vec<Option<f64>>,
    /// Mean reported epsilon over successful seeds; `None` without noise.
    pub achieved_epsilon: Option<f64>,
    pub nominal_epsilon: bool,
    pub accountant: String,
    pub config_hash: String,
    pub failures: Vec<(u64, String)>,
}

impl VariantSummary {
    pub fn ok(&self) -> bool {
        self.mean.is_some()
    }

    fn from_runs(cfg: &RunConfig, seeds: &[u64], runs: Vec<Result<RunOutcome>>) -> Self {
        let mut acc = Vec::with_capacity(seeds.len());
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for (&seed, run) in seeds.iter().zip(runs) {
            match run {
                Ok(out) => {
                    acc.push(Some(out.eval.accuracy));
                    ok.push(out);
                }
                Err(e) => {
                    acc.push(None);
                    failures.push((seed, format!("{}: {e}", e.code())));
                }
            }
        }
        let n = ok.len() as f64;
        let mean_of = |f: &dyn Fn(&RunOutcome) -> f64| ok.iter().map(f).sum::<f64>() / n;
        let mean = (!ok.is_empty()).then(|| MeanMetrics {
            accuracy: mean_of(&|o| o.eval.accuracy),
            precision: mean_of(&|o| o.eval.precision),
            recall: mean_of(&|o| o.eval.recall),
            f1: mean_of(&|o| o.eval.f1),
            roc_auc: mean_of(&|o| o.eval.roc_auc),
        });
        let eps: Vec<f64> = ok.iter().filter_map(|o| o.privacy.as_ref().map(|p| p.epsilon)).collect();
        let achieved_epsilon = (!eps.is_empty() && eps.len() == ok.len()).then(|| eps.iter().sum::<f64>() / n);
        VariantSummary {
            mean,
            seed_accuracies: acc,
            achieved_epsilon,
            nominal_epsilon: ok.iter().any(|o| o.nominal_epsilon),
            accountant: cfg.accountant.clone(),
            config_hash: cfg.hash(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub dp: VariantSummary,
    pub adp: VariantSummary,
}

impl SweepRow {
    pub fn variant(&self, v: Variant) -> &VariantSummary {
        match v {
            Variant::Dp => &self.dp,
            Variant::Adp => &self.adp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub parameter: SweepParam,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// Run both variants for every value and seed. Cells run in parallel;
/// the report is assembled in input order. A failing cell is recorded and
/// the sweep carries on.
pub fn run_sweep(base: &RunConfig, parameter: SweepParam, values: &[String], seeds: &[u64]) -> Result<SweepReport> {
    if values.is_empty() || seeds.is_empty() {
        return Err(invalid("a sweep needs at least one value and one seed"));
    }
    let mut configs = Vec::with_capacity(values.len() * 2);
    for value in values {
        for variant in Variant::BOTH {
            let mut cfg = base.clone();
            parameter.apply(&mut cfg, value)?;
            variant.configure(&mut cfg);
            configs.push(cfg);
        }
    }

    // every cell with the same seed shares its data
    let datasets: Vec<Result<_>> = seeds
        .par_iter()
        .map(|&seed| load_dataset(&RunConfig { seed, ..base.clone() }))
        .collect();

    let cells: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..seeds.len()).map(move |s| (c, s))).collect();
    let mut results: Vec<Result<RunOutcome>> = cells
        .par_iter()
        .map(|&(c, s)| {
            let cfg = RunConfig {
                seed: seeds[s],
                ..configs[c].clone()
            };
            match &datasets[s] {
                Ok(data) => run_on(&cfg, data),
                Err(e) => Err(invalid(format!("dataset for seed {}: {e}", seeds[s]))),
            }
        })
        .collect();

    let mut summaries = Vec::with_capacity(configs.len());
    for cfg in configs.iter().rev() {
        let runs = results.split_off(results.len() - seeds.len());
        summaries.push(VariantSummary::from_runs(cfg, seeds, runs));
    }
    summaries.reverse();
    let mut it = summaries.into_iter();
    let rows = values
        .iter()
        .map(|v| SweepRow {
            value: v.clone(),
            dp: it.next().unwrap(),
            adp: it.next().unwrap(),
        })
        .collect();
    Ok(SweepReport {
        parameter,
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Default grid for a parameter.
pub fn default_values(parameter: SweepParam) -> Vec<String> {
    let v: &[&str] = match parameter {
        SweepParam::Epsilon | SweepParam::NoiseMultiplier => &["1", "2", "5", "8", "10"],
        SweepParam::Clip => &["1", "5", "10", "20", "50"],
        SweepParam::Optimizer => &["sgd", "rmsprop", "adam", "adamw"],
        SweepParam::Imbalance => &[Imbalance::None.as_str(), Imbalance::Wrs.as_str(), Imbalance::Cw.as_str()],
        SweepParam::TrainableLayers => &["1", "2"],
    };
    v.iter().map(|s| s.to_string()).collect()
}

/// The noise target a sweep row was run with, for reporting.
pub fn row_noise(base: &RunConfig, parameter: SweepParam, value: &str) -> Result<NoiseTarget> {
    let mut cfg = base.clone();
    parameter.apply(&mut cfg, value)?;
    Ok(cfg.noise)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    parameter: String,
    value: String,
    variant: String,
    status: String,
    accuracy: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    roc_auc: Option<f64>,
    achieved_epsilon: Option<f64>,
    nominal_epsilon: bool,
    accountant: String,
    config_hash: String,
    seeds: String,
    seed_accuracies: String,
    failures: String,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split_list(s: &str) -> Vec<&str> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(';').collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

impl SweepReport {
    /// One line per (value, variant), each carrying its provenance.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            for variant in Variant::BOTH {
                let s = row.variant(variant);
                let m = s.mean;
                let acc: Vec<String> = s.seed_accuracies.iter().map(|a| a.map(|v| v.to_string()).unwrap_or_default()).collect();
                w.serialize(CsvRecord {
                    parameter: self.parameter.as_str().into(),
                    value: row.value.clone(),
                    variant: variant.as_str().into(),
                    status: if s.ok() { "ok" } else { "failed" }.into(),
                    accuracy: m.map(|m| m.accuracy),
                    precision: m.map(|m| m.precision),
                    recall: m.map(|m| m.recall),
                    f1: m.map(|m| m.f1),
                    roc_auc: m.map(|m| m.roc_auc),
                    achieved_epsilon: s.achieved_epsilon,
                    nominal_epsilon: s.nominal_epsilon,
                    accountant: s.accountant.clone(),
                    config_hash: s.config_hash.clone(),
                    seeds: join(&self.seeds),
                    seed_accuracies: acc.join(";"),
                    failures: serde_json::to_string(&s.failures)?,
                })
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Inverse of [`SweepReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let records: Vec<CsvRecord> = r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
        if records.is_empty() || records.len() % 2 != 0 {
            return Err(Error::Parse("sweep csv needs a dp and an adp line per value".into()));
        }
        let parameter = SweepParam::parse(&records[0].parameter)?;
        let seeds = split_list(&records[0].seeds)
            .into_iter()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad seed `{s}`"))))
            .collect::<Result<Vec<u64>>>()?;

        let summary = |rec: &CsvRecord| -> Result<VariantSummary> {
            let mean = match rec.status.as_str() {
                "ok" => Some(MeanMetrics {
                    accuracy: rec.accuracy.ok_or_else(|| Error::Parse("ok row without accuracy".into()))?,
                    precision: rec.precision.unwrap_or(f64::NAN),
                    recall: rec.recall.unwrap_or(f64::NAN),
                    f1: rec.f1.unwrap_or(f64::NAN),
                    roc_auc: rec.roc_auc.unwrap_or(f64::NAN),
                }),
                "failed" => None,
                other => return Err(Error::Parse(format!("unknown status `{other}`"))),
            };
            let seed_accuracies = rec
                .seed_accuracies
                .split(';')
                .take(seeds.len())
                .map(|a| {
                    if a.is_empty() {
                        Ok(None)
                    } else {
                        a.parse().map(Some).map_err(|_| Error::Parse(format!("bad accuracy `{a}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VariantSummary {
                mean,
                seed_accuracies,
                achieved_epsilon: rec.achieved_epsilon,
                nominal_epsilon: rec.nominal_epsilon,
                accountant: rec.accountant.clone(),
                config_hash: rec.config_hash.clone(),
                failures: serde_json::from_str(&rec.failures)?,
            })
        };

        let mut rows = Vec::with_capacity(records.len() / 2);
        for pair in records.chunks(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if Variant::parse(&a.variant)? != Variant::Dp || Variant::parse(&b.variant)? != Variant::Adp || a.value != b.value {
                return Err(Error::Parse(format!("value `{}` lacks its dp/adp pair", a.value)));
            }
            rows.push(SweepRow {
                value: a.value.clone(),
                dp: summary(a)?,
                adp: summary(b)?,
            });
        }
        Ok(SweepReport { parameter, seeds, rows })
    }

    /// Aligned table: one line per value, DP and ADP side by side, scores in
    /// percent.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} versus metric scores", self.parameter.title());
        let _ = writeln!(out, "seeds: {}", join(&self.seeds));
        let head = ["Acc", "Prec", "Rec", "F1", "AUC", "eps"];
        let width = self
            .rows
            .iter()
            .map(|r| r.value.chars().count())
            .chain([self.parameter.title().len(), 8])
            .max()
            .unwrap_or(8);
        let mut header = format!("{:<width$}", self.parameter.title());
        for v in ["DP", "ADP"] {
            header.push_str(" |");
            for h in head {
                header.push_str(&format!(" {:>8}", format!("{v} {h}")));
            }
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.chars().count()));
        for row in &self.rows {
            let mut line = format!("{:<width$}", row.value);
            for v in Variant::BOTH {
                let s = row.variant(v);
                line.push_str(" |");
                match s.mean {
                    Some(m) => {
                        for x in [m.accuracy, m.precision, m.recall, m.f1, m.roc_auc] {
                            line.push_str(&format!(" {:>8.2}", 100.0 * x));
                        }
                        let eps = match s.achieved_epsilon {
                            Some(e) if s.nominal_epsilon => format!("{e:.3}*"),
                            Some(e) => format!("{e:.3}"),
                            None => "-".into(),
                        };
                        line.push_str(&format!(" {eps:>8}"));
                    }
                    None => line.push_str(&format!(" {:>53}", "failed")),
                }
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out);
        for row in &self.rows {
            for v in Variant::BOTH {
                let s = row.variant(v);
                let _ = writeln!(
                    out,
                    "{}={} {}: accountant {}, config {}{}",
                    self.parameter.as_str(),
                    row.value,
                    v.as_str(),
                    s.accountant,
                    s.config_hash,
                    if s.failures.is_empty() { String::new() } else { format!(", {} failed seeds", s.failures.len()) }
                );
            }
        }
        if self.rows.iter().any(|r| r.dp.nominal_epsilon || r.adp.nominal_epsilon) {
            let _ = writeln!(out, "* nominal: the sampler is not Poisson, so subsampling amplification does not apply");
        }
        out
    }

    /// Mean accuracies of one variant, in row order.
    pub fn mean_accuracies(&self, v: Variant) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.variant(v).mean.map(|m| m.accuracy)).collect()
    }
}
