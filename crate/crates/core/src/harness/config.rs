//! Run configuration and its flat `key=value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::data::{SynthSpec, DEFAULT_CLASS_RATIO};
use crate::accountant::DEFAULT_DELTA;
use crate::error::{Error, Result};
use crate::optim::DpHyperParams;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// Columnar `label,f0,...` file.
    File(PathBuf),
}

/// How the noise level is chosen. Exactly one of the two is ever set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseTarget {
    /// Calibrate `sigma` so the run spends this epsilon.
    Epsilon(f64),
    /// Use this noise multiplier and report whatever epsilon results.
    Sigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Imbalance {
    None,
    /// Weighted random sampler lots.
    Wrs,
    /// Class-weighted loss.
    Cw,
}

impl Imbalance {
    pub fn as_str(self) -> &'static str {
        match self {
            Imbalance::None => "none",
            Imbalance::Wrs => "wrs",
            Imbalance::Cw => "cw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Imbalance::None),
            "wrs" => Ok(Imbalance::Wrs),
            "cw" => Ok(Imbalance::Cw),
            other => Err(Error::Parse(format!("imbalance must be none, wrs or cw, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub hidden: usize,
    pub data: DataSource,
    pub epochs: usize,
    pub lot_size: usize,
    pub learning_rate: f64,
    /// `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub noise: NoiseTarget,
    pub optimizer: String,
    pub adaptive: bool,
    /// Noise variance decay per epoch for adaptive runs.
    pub decay: f64,
    pub weight_decay: f64,
    pub accountant: String,
    /// Lot sampler; `wrs` imbalance overrides it.
    pub sampler: String,
    pub imbalance: Imbalance,
    /// Top layer groups to train; `None` trains everything.
    pub trainable_layers: Option<usize>,
    pub seed: u64,
    pub delta: f64,
    pub epsilon_cap: Option<f64>,
    pub check_clipping: bool,
    /// `false` trains without clipping, noise or accounting.
    pub private: bool,
}

pub const DEFAULT_SYNTH: SynthSpec = SynthSpec {
    n: 20_000,
    dim: 16,
    class_ratio: DEFAULT_CLASS_RATIO,
    separation: 2.0,
};

impl Default for RunConfig {
    fn default() -> Self {
        let hp = DpHyperParams::default();
        Self {
            model: "mlp".into(),
            hidden: crate::model::DEFAULT_HIDDEN,
            data: DataSource::Synthetic(DEFAULT_SYNTH),
            epochs: 10,
            lot_size: hp.lot_size,
            learning_rate: hp.learning_rate,
            clip: hp.clip_norm,
            noise: NoiseTarget::Epsilon(1.0),
            optimizer: hp.optimizer,
            adaptive: false,
            decay: hp.decay,
            weight_decay: hp.weight_decay,
            accountant: "rdp".into(),
            sampler: "poisson".into(),
            imbalance: Imbalance::None,
            trainable_layers: None,
            seed: 0,
            delta: DEFAULT_DELTA,
            epsilon_cap: None,
            check_clipping: true,
            private: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "none" => Ok(f64::INFINITY),
        _ => parse_num(key, value),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

fn fmt_opt<T: ToString>(v: Option<T>, none: &str) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| none.to_string())
}

/// Keys accepted by [`RunConfig::set`], in canonical order.
pub const KEYS: &[&str] = &[
    "model",
    "hidden",
    "data",
    "n",
    "dim",
    "class-ratio",
    "separation",
    "epochs",
    "lot-size",
    "learning-rate",
    "clip",
    "epsilon",
    "sigma",
    "optimizer",
    "adaptive",
    "decay",
    "weight-decay",
    "accountant",
    "sampler",
    "imbalance",
    "trainable-layers",
    "seed",
    "delta",
    "epsilon-cap",
    "check-clipping",
    "private",
];

fn canonical_key(key: &str) -> String {
    let k = key.trim().to_ascii_lowercase().replace('_', "-");
    match k.as_str() {
        "noise-multiplier" => "sigma".into(),
        "lr" => "learning-rate".into(),
        _ => k,
    }
}

impl RunConfig {
    fn synth_mut(&mut self, key: &str) -> Result<&mut SynthSpec> {
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::File(_) => Err(Error::Parse(format!("`{key}` only applies to synthetic data"))),
        }
    }

    /// Set one field from its textual form. Keys are kebab-case; snake_case
    /// spellings are accepted too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let v = value.trim();
        match key.as_str() {
            "model" => self.model = v.to_ascii_lowercase(),
            "hidden" => self.hidden = parse_num(&key, v)?,
            "data" => {
                self.data = if v.eq_ignore_ascii_case("synthetic") {
                    match self.data {
                        DataSource::Synthetic(_) => self.data.clone(),
                        DataSource::File(_) => DataSource::Synthetic(DEFAULT_SYNTH),
                    }
                } else {
                    DataSource::File(PathBuf::from(v))
                }
            }
            "n" => self.synth_mut(&key)?.n = parse_num(&key, v)?,
            "dim" => self.synth_mut(&key)?.dim = parse_num(&key, v)?,
            "class-ratio" => self.synth_mut(&key)?.class_ratio = parse_num(&key, v)?,
            "separation" => self.synth_mut(&key)?.separation = parse_num(&key, v)?,
            "epochs" => self.epochs = parse_num(&key, v)?,
            "lot-size" => self.lot_size = parse_num(&key, v)?,
            "learning-rate" => self.learning_rate = parse_num(&key, v)?,
            "clip" => self.clip = parse_f64(&key, v)?,
            "epsilon" => self.noise = NoiseTarget::Epsilon(parse_num(&key, v)?),
            "sigma" => self.noise = NoiseTarget::Sigma(parse_num(&key, v)?),
            "optimizer" => self.optimizer = v.to_ascii_lowercase(),
            "adaptive" => self.adaptive = parse_bool(&key, v)?,
            "decay" => self.decay = parse_num(&key, v)?,
            "weight-decay" => self.weight_decay = parse_num(&key, v)?,
            "accountant" => self.accountant = v.to_ascii_lowercase(),
            "sampler" => self.sampler = v.to_ascii_lowercase(),
            "imbalance" => self.imbalance = Imbalance::parse(v)?,
            "trainable-layers" => {
                self.trainable_layers = if v.eq_ignore_ascii_case("all") {
                    None
                } else {
                    Some(parse_num(&key, v)?)
                }
            }
            "seed" => self.seed = parse_num(&key, v)?,
            "delta" => self.delta = parse_num(&key, v)?,
            "epsilon-cap" => {
                self.epsilon_cap = if v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_num(&key, v)?)
                }
            }
            "check-clipping" => self.check_clipping = parse_bool(&key, v)?,
            "private" => self.private = parse_bool(&key, v)?,
            other => {
                return Err(Error::Parse(format!(
                    "unknown key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply `(key, value)` pairs in order. Setting both `epsilon` and
    /// `sigma` in one batch is rejected.
    pub fn apply_pairs<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut saw = (false, false);
        for (k, v) in pairs {
            match canonical_key(k).as_str() {
                "epsilon" => saw.0 = true,
                "sigma" => saw.1 = true,
                _ => {}
            }
            self.set(k, v)?;
        }
        if saw.0 && saw.1 {
            return Err(Error::Parse("set either `epsilon` or `sigma`, not both".into()));
        }
        Ok(())
    }

    /// Parse flat `key = value` text; `#` starts a comment.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_pairs(parse_kv(text)?.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }

    /// Canonical `key=value` lines covering every field.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("model", self.model.clone());
        line("hidden", self.hidden.to_string());
        match &self.data {
            DataSource::Synthetic(s) => {
                line("data", "synthetic".into());
                line("n", s.n.to_string());
                line("dim", s.dim.to_string());
                line("class-ratio", s.class_ratio.to_string());
                line("separation", s.separation.to_string());
            }
            DataSource::File(p) => line("data", p.display().to_string()),
        }
        line("epochs", self.epochs.to_string());
        line("lot-size", self.lot_size.to_string());
        line("learning-rate", self.learning_rate.to_string());
        line("clip", if self.clip.is_infinite() { "inf".into() } else { self.clip.to_string() });
        match self.noise {
            NoiseTarget::Epsilon(e) => line("epsilon", e.to_string()),
            NoiseTarget::Sigma(s) => line("sigma", s.to_string()),
        }
        line("optimizer", self.optimizer.clone());
        line("adaptive", self.adaptive.to_string());
        line("decay", self.decay.to_string());
        line("weight-decay", self.weight_decay.to_string());
        line("accountant", self.accountant.clone());
        line("sampler", self.sampler.clone());
        line("imbalance", self.imbalance.as_str().into());
        line("trainable-layers", fmt_opt(self.trainable_layers, "all"));
        line("seed", self.seed.to_string());
        line("delta", self.delta.to_string());
        line("epsilon-cap", fmt_opt(self.epsilon_cap, "none"));
        line("check-clipping", self.check_clipping.to_string());
        line("private", self.private.to_string());
        out
    }

    /// Short SHA-256 digest of every field except the seed.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_kv_text()
            .lines()
            .filter(|l| !l.starts_with("seed="))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Optimizer hyperparameters implied by this configuration, with
    /// `sigma0` supplied by the caller after calibration.
    pub fn hyper_params(&self, sigma0: f64) -> DpHyperParams {
        DpHyperParams {
            clip_norm: self.clip,
            noise_multiplier: sigma0,
            lot_size: self.lot_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            decay: self.decay,
            optimizer: self.optimizer.clone(),
            adaptive: self.adaptive,
            ..DpHyperParams::default()
        }
    }
}

/// Split flat text into trimmed `(key, value)` pairs.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got `{line}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
