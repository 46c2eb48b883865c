use super::{cross_entropy2, softmax2, uniform_fill, Batch, LayerShape, Model, ModelParams};
use crate::error::{Error, Result};

/// One hidden tanh layer followed by a two-logit output layer.
///
/// Layout: `hidden.weight [h, d]`, `hidden.bias [h]`, `output.weight [2, h]`,
/// `output.bias [2]`.
#[derive(Debug, Clone)]
pub struct Mlp {
    input_dim: usize,
    hidden: usize,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("mlp needs nonzero input and hidden widths".into()));
        }
        Ok(Self { input_dim, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> Offsets {
        let (d, h) = (self.input_dim, self.hidden);
        Offsets {
            w1: 0,
            b1: h * d,
            w2: h * d + h,
            b2: h * d + h + 2 * h,
        }
    }

    fn hidden_act(&self, v: &[f64], x: &[f64], act: &mut [f64]) -> Result<()> {
        let (d, o) = (self.input_dim, self.offsets());
        for (j, a) in act.iter_mut().enumerate() {
            let row = &v[o.w1 + j * d..o.w1 + (j + 1) * d];
            let pre = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + v[o.b1 + j];
            *a = pre.tanh();
        }
        if act.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite {
                layer: "hidden".into(),
            });
        }
        Ok(())
    }

    fn output(&self, v: &[f64], act: &[f64]) -> Result<[f64; 2]> {
        let (h, o) = (self.hidden, self.offsets());
        let mut z = [0.0; 2];
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &v[o.w2 + k * h..o.w2 + (k + 1) * h];
            *zk = row.iter().zip(act).map(|(w, a)| w * a).sum::<f64>() + v[o.b2 + k];
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                layer: "output".into(),
            });
        }
        Ok(z)
    }
}

impl Model for Mlp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn layout(&self) -> Vec<LayerShape> {
        let (d, h) = (self.input_dim, self.hidden);
        vec![
            LayerShape::new("hidden.weight", &[h, d]),
            LayerShape::new("hidden.bias", &[h]),
            LayerShape::new("output.weight", &[2, h]),
            LayerShape::new("output.bias", &[2]),
        ]
    }

    fn layer_groups(&self) -> Vec<Vec<String>> {
        vec![
            vec!["hidden.weight".into(), "hidden.bias".into()],
            vec!["output.weight".into(), "output.bias".into()],
        ]
    }

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> ModelParams {
        let mut p = ModelParams::zeros(self.layout());
        let o = self.offsets();
        let v = p.values_mut();
        uniform_fill(rng, &mut v[o.w1..o.w2], self.input_dim);
        uniform_fill(rng, &mut v[o.w2..], self.hidden);
        p
    }

    fn logits_row(&self, params: &ModelParams, x: &[f64]) -> Result<[f64; 2]> {
        let mut act = vec![0.0; self.hidden];
        self.hidden_act(params.values(), x, &mut act)?;
        self.output(params.values(), &act)
    }

    fn backprop_row(
        &self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let v = params.values();
        let (d, h, o) = (self.input_dim, self.hidden, self.offsets());
        let mut act = vec![0.0; h];
        self.hidden_act(v, x, &mut act)?;
        let z = self.output(v, &act)?;
        let p = softmax2(z);
        let dz = [weight * (p[0] - (label == 0) as u8 as f64), weight * (p[1] - (label == 1) as u8 as f64)];

        for k in 0..2 {
            for j in 0..h {
                grad[o.w2 + k * h + j] = dz[k] * act[j];
            }
            grad[o.b2 + k] = dz[k];
        }
        for j in 0..h {
            let da = dz[0] * v[o.w2 + j] + dz[1] * v[o.w2 + h + j];
            let dpre = da * (1.0 - act[j] * act[j]);
            for i in 0..d {
                grad[o.w1 + j * d + i] = dpre * x[i];
            }
            grad[o.b1 + j] = dpre;
        }
        Ok(weight * cross_entropy2(z, label))
    }

    fn batch_loss_and_grad(&self, params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let v = params.values();
        let (d, h, o) = (self.input_dim, self.hidden, self.offsets());
        let n = batch.len();

        // forward for the whole batch: activations A (n x h), logit residuals R (n x 2)
        let mut acts = vec![0.0; n * h];
        let mut resid = vec![0.0; n * 2];
        let mut loss = 0.0;
        for (i, x) in batch.features().iter_rows().enumerate() {
            let a = &mut acts[i * h..(i + 1) * h];
            self.hidden_act(v, x, a)?;
            let z = self.output(v, a)?;
            let p = softmax2(z);
            let (y, w) = (batch.labels()[i], batch.weight(i));
            resid[2 * i] = w * (p[0] - (y == 0) as u8 as f64);
            resid[2 * i + 1] = w * (p[1] - (y == 1) as u8 as f64);
            loss += w * cross_entropy2(z, y);
        }

        // output grads: R^T A and column sums of R
        let mut grad = vec![0.0; params.len()];
        for i in 0..n {
            for k in 0..2 {
                let r = resid[2 * i + k];
                grad[o.b2 + k] += r;
                for j in 0..h {
                    grad[o.w2 + k * h + j] += r * acts[i * h + j];
                }
            }
        }
        // hidden grads: D = (R W2) * (1 - A^2), then D^T X
        for i in 0..n {
            let x = batch.features().row(i);
            for j in 0..h {
                let a = acts[i * h + j];
                let back = resid[2 * i] * v[o.w2 + j] + resid[2 * i + 1] * v[o.w2 + h + j];
                let dpre = back * (1.0 - a * a);
                grad[o.b1 + j] += dpre;
                for k in 0..d {
                    grad[o.w1 + j * d + k] += dpre * x[k];
                }
            }
        }
        let nf = n as f64;
        grad.iter_mut().for_each(|g| *g /= nf);
        Ok((loss / nf, grad))
    }
}
