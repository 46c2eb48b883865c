//! Small differentiable binary classifiers with hand-written backprop.
//!
//! Every model maps a feature row to two logits and is trained with the
//! softmax cross-entropy. Per-example gradients are exact; rows can be
//! evaluated in parallel because each row only reads the parameters.

mod logistic;
mod matrix;
mod mlp;

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use logistic::Logistic;
pub use matrix::Matrix;
pub use mlp::Mlp;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Default hidden width of the MLP.
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter vector plus the layer layout that slices it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layout: Vec<LayerShape>,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(layout: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayerShape::numel).sum();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "layout describes {expected} parameters but {} values were given",
                values.len()
            )));
        }
        let params = Self { layout, values };
        params.check_finite()?;
        Ok(params)
    }

    pub fn zeros(layout: Vec<LayerShape>) -> Self {
        let n = layout.iter().map(LayerShape::numel).sum();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Index range of the named layer inside the flat vector.
    pub fn layer_range(&self, name: &str) -> Result<Range<usize>> {
        let mut start = 0;
        for l in &self.layout {
            let end = start + l.numel();
            if l.name == name {
                return Ok(start..end);
            }
            start = end;
        }
        Err(Error::Shape(format!("no layer named `{name}`")))
    }

    pub fn layer(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.values[self.layer_range(name)?])
    }

    /// Errors with the first layer holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        let mut start = 0;
        for l in &self.layout {
            let end = start + l.numel();
            if self.values[start..end].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: l.name.clone(),
                });
            }
            start = end;
        }
        Ok(())
    }
}

/// A lot (or any set) of labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Matrix,
    labels: Vec<usize>,
    sample_weights: Option<Vec<f64>>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>, sample_weights: Option<Vec<f64>>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Shape("a batch needs at least one sample".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if features.as_slice().iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("NaN feature value".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidArgument(format!("label {bad} is not in {{0,1}}")));
        }
        if let Some(w) = &sample_weights {
            if w.len() != labels.len() {
                return Err(Error::Shape(format!(
                    "{} sample weights for {} samples",
                    w.len(),
                    labels.len()
                )));
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidArgument("sample weights must be positive and finite".into()));
            }
        }
        Ok(Self {
            features,
            labels,
            sample_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_weights(&self) -> Option<&[f64]> {
        self.sample_weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.sample_weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Rows `idx` (repeats allowed) as a new batch.
    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.sample_weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
        )
    }

    /// Same samples with every weight replaced.
    pub fn with_sample_weights(mut self, weights: Option<Vec<f64>>) -> Result<Batch> {
        self.sample_weights = None;
        Batch::new(self.features, self.labels, weights)
    }
}

/// Row `i` of `grads` is the gradient of sample `i`'s weighted loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleGradients {
    pub grads: Matrix,
    pub loss_values: Vec<f64>,
}

/// A binary classifier producing two logits per row.
pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;

    fn input_dim(&self) -> usize;

    fn layout(&self) -> Vec<LayerShape>;

    /// Layers grouped from input to output; each group is one trainable unit.
    fn layer_groups(&self) -> Vec<Vec<String>>;

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every tensor.
    fn init_params(&self, rng: &mut dyn rand::RngCore) -> ModelParams;

    /// Logits for one feature row.
    fn logits_row(&self, params: &ModelParams, x: &[f64]) -> Result<[f64; 2]>;

    /// Weighted loss of one sample; its gradient is written into `grad`.
    fn backprop_row(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64>;

    /// Mean weighted loss and its gradient, accumulated over the batch
    /// without materialising per-example rows.
    fn batch_loss_and_grad(&self, params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>)>;
}

fn check_shapes(model: &dyn Model, params: &ModelParams, width: usize) -> Result<()> {
    if width != model.input_dim() {
        return Err(Error::Shape(format!(
            "{} expects {} features, got {width}",
            model.name(),
            model.input_dim()
        )));
    }
    if params.layout() != model.layout().as_slice() {
        return Err(Error::Shape(format!("parameter layout does not match {}", model.name())));
    }
    Ok(())
}

/// L x 2 logits.
pub fn forward(model: &dyn Model, params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    check_shapes(model, params, features.cols())?;
    let mut out = Matrix::zeros(features.rows(), 2);
    for (i, x) in features.iter_rows().enumerate() {
        let z = model.logits_row(params, x)?;
        out.row_mut(i).copy_from_slice(&z);
    }
    Ok(out)
}

/// Row-wise softmax of a two-column logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), 2);
    for (i, z) in logits.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(&softmax2([z[0], z[1]]));
    }
    out
}

/// L x 2 class probabilities.
pub fn predict_proba(model: &dyn Model, params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&forward(model, params, features)?))
}

/// Exact per-example gradients, rows evaluated in parallel.
pub fn loss_and_per_example_grads(
    model: &dyn Model,
    params: &ModelParams,
    batch: &Batch,
) -> Result<PerExampleGradients> {
    check_shapes(model, params, batch.features().cols())?;
    let p = params.len();
    let mut grads = Matrix::zeros(batch.len(), p);
    let losses: Vec<Result<f64>> = grads
        .as_mut_slice()
        .par_chunks_mut(p.max(1))
        .enumerate()
        .map(|(i, row)| {
            model.backprop_row(
                params,
                batch.features().row(i),
                batch.labels()[i],
                batch.weight(i),
                row,
            )
        })
        .collect();
    let loss_values = losses.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PerExampleGradients { grads, loss_values })
}

/// Flat indices of the parameters in the top `trainable_layers` layer
/// groups; `None` means every parameter.
pub fn trainable_indices(
    model: &dyn Model,
    params: &ModelParams,
    trainable_layers: Option<usize>,
) -> Result<Vec<usize>> {
    let groups = model.layer_groups();
    let k = trainable_layers.unwrap_or(groups.len());
    if k == 0 || k > groups.len() {
        return Err(Error::InvalidArgument(format!(
            "{} has {} trainable layers, asked for {k}",
            model.name(),
            groups.len()
        )));
    }
    let mut idx = Vec::new();
    for group in &groups[groups.len() - k..] {
        for name in group {
            idx.extend(params.layer_range(name)?);
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

pub(crate) fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Cross-entropy of two logits against `label`, via log-sum-exp.
pub(crate) fn cross_entropy2(z: [f64; 2], label: usize) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[label]
}

pub(crate) fn uniform_fill(rng: &mut dyn rand::RngCore, out: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Constructor options shared by all model factories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelOptions {
    pub input_dim: usize,
    pub hidden: usize,
}

pub type ModelFactory = Arc<dyn Fn(ModelOptions) -> Result<Box<dyn Model>> + Send + Sync>;

/// Registry with `logistic` and `mlp`.
pub fn registry() -> Registry<ModelFactory> {
    let mut reg: Registry<ModelFactory> = Registry::new("model");
    reg.register(
        "logistic",
        Arc::new(|o: ModelOptions| Ok(Box::new(Logistic::new(o.input_dim)?) as Box<dyn Model>)),
    );
    reg.register(
        "mlp",
        Arc::new(|o: ModelOptions| Ok(Box::new(Mlp::new(o.input_dim, o.hidden)?) as Box<dyn Model>)),
    );
    reg
}

pub fn build(name: &str, options: ModelOptions) -> Result<Box<dyn Model>> {
    (registry().get(name)?)(options)
}
