use super::{cross_entropy2, softmax2, uniform_fill, Batch, LayerShape, Model, ModelParams};
use crate::error::{Error, Result};

/// Logistic regression written as a two-logit model: logits `(0, w.x + b)`.
#[derive(Debug, Clone)]
pub struct Logistic {
    input_dim: usize,
}

impl Logistic {
    pub fn new(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("logistic model needs at least one feature".into()));
        }
        Ok(Self { input_dim })
    }

    fn score(&self, params: &ModelParams, x: &[f64]) -> Result<f64> {
        let v = params.values();
        let d = self.input_dim;
        let z = v[..d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + v[d];
        if !z.is_finite() {
            return Err(Error::NonFinite {
                layer: "linear".into(),
            });
        }
        Ok(z)
    }
}

impl Model for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn layout(&self) -> Vec<LayerShape> {
        vec![
            LayerShape::new("linear.weight", &[1, self.input_dim]),
            LayerShape::new("linear.bias", &[1]),
        ]
    }

    fn layer_groups(&self) -> Vec<Vec<String>> {
        vec![vec!["linear.weight".into(), "linear.bias".into()]]
    }

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> ModelParams {
        let mut p = ModelParams::zeros(self.layout());
        uniform_fill(rng, p.values_mut(), self.input_dim);
        p
    }

    fn logits_row(&self, params: &ModelParams, x: &[f64]) -> Result<[f64; 2]> {
        Ok([0.0, self.score(params, x)?])
    }

    fn backprop_row(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let z = [0.0, self.score(params, x)?];
        let p1 = softmax2(z)[1];
        let dz = weight * (p1 - label as f64);
        let d = self.input_dim;
        for (g, xi) in grad[..d].iter_mut().zip(x) {
            *g = dz * xi;
        }
        grad[d] = dz;
        Ok(weight * cross_entropy2(z, label))
    }

    fn batch_loss_and_grad(&self, params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let d = self.input_dim;
        let n = batch.len() as f64;
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        // accumulate residual-weighted sums, then normalise once
        for (i, x) in batch.features().iter_rows().enumerate() {
            let z = [0.0, self.score(params, x)?];
            let y = batch.labels()[i];
            let w = batch.weight(i);
            let r = w * (softmax2(z)[1] - y as f64);
            for (g, xi) in grad[..d].iter_mut().zip(x) {
                *g += r * xi;
            }
            grad[d] += r;
            loss += w * cross_entropy2(z, y);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }
}
