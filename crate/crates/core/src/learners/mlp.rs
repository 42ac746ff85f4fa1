use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub step_size: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            step_size: 1e-3,
            epochs: 200,
            batch: 32,
            seed: 0,
            l2: 0.0,
        }
    }
}

/// Fully connected network with scalar linear output. Parameters live in one
/// flat vector: per layer the column-major weight block, then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    sizes: Vec<usize>,
    activation: Activation,
}

struct Layer {
    w_off: usize,
    b_off: usize,
    inputs: usize,
    outputs: usize,
}

impl MlpNet {
    pub fn new(inputs: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        MlpNet { sizes, activation }
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    w_off: off,
                    b_off: off + w[0] * w[1],
                    inputs: w[0],
                    outputs: w[1],
                };
                off += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights (He-uniform before ReLU), zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::seeded(seed);
        let mut params = vec![0.0; self.n_params()];
        let layers = self.layers();
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let bound = if l < last && self.activation == Activation::Relu {
                (6.0 / layer.inputs as f64).sqrt()
            } else {
                (6.0 / (layer.inputs + layer.outputs) as f64).sqrt()
            };
            for w in &mut params[layer.w_off..layer.b_off] {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn weights<'a>(&self, params: &'a [f64], layer: &Layer) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(
            &params[layer.w_off..layer.b_off],
            layer.outputs,
            layer.inputs,
        )
    }

    /// Pre-activations of every layer for inputs stored one sample per column.
    fn forward_t(&self, params: &[f64], xt: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut pre = Vec::with_capacity(layers.len());
        let mut h = xt.clone();
        for (l, layer) in layers.iter().enumerate() {
            let w = self.weights(params, layer);
            let b = &params[layer.b_off..layer.b_off + layer.outputs];
            let mut z = w * &h;
            for mut col in z.column_iter_mut() {
                for (v, bi) in col.iter_mut().zip(b) {
                    *v += bi;
                }
            }
            if l < last {
                h = z.map(|v| self.activation.apply(v));
            }
            pre.push(z);
        }
        pre
    }

    /// Network outputs for rows of `x`.
    pub fn forward(&self, params: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
        let pre = self.forward_t(params, &x.transpose());
        pre.last().expect("at least one layer").iter().copied().collect()
    }

    /// `(1/(2B))Σ(ŷ − y)² + (penalty/2)‖W‖²` and its gradient, for rows of `x`.
    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        x: &DMatrix<f64>,
        y: &[f64],
        penalty: f64,
    ) -> (f64, Vec<f64>) {
        self.loss_and_gradient_t(params, &x.transpose(), y, penalty)
    }

    fn loss_and_gradient_t(
        &self,
        params: &[f64],
        xt: &DMatrix<f64>,
        y: &[f64],
        penalty: f64,
    ) -> (f64, Vec<f64>) {
        let layers = self.layers();
        let pre = self.forward_t(params, xt);
        let bsz = y.len() as f64;
        let out = pre.last().expect("at least one layer");
        let mut delta = DMatrix::from_fn(1, y.len(), |_, j| (out[(0, j)] - y[j]) / bsz);
        let mut loss = out
            .iter()
            .zip(y)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / (2.0 * bsz);

        let mut grad = vec![0.0; params.len()];
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let w = self.weights(params, layer);
            let input = if l == 0 {
                xt.clone()
            } else {
                pre[l - 1].map(|v| self.activation.apply(v))
            };
            let gw = &delta * input.transpose();
            for (g, (&d, &wv)) in grad[layer.w_off..layer.b_off]
                .iter_mut()
                .zip(gw.as_slice().iter().zip(&params[layer.w_off..layer.b_off]))
            {
                *g = d + penalty * wv;
            }
            for (i, g) in grad[layer.b_off..layer.b_off + layer.outputs]
                .iter_mut()
                .enumerate()
            {
                *g = delta.row(i).sum();
            }
            loss += 0.5 * penalty * w.iter().map(|v| v * v).sum::<f64>();
            if l > 0 {
                let back = w.transpose() * &delta;
                delta = back.zip_map(&pre[l - 1], |d, z| d * self.activation.derivative(z));
            }
        }
        (loss, grad)
    }
}

/// Trained network plus the input/output standardization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    net: MlpNet,
    params: Vec<f64>,
    x_means: Vec<f64>,
    x_scales: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    loss_trace: Vec<f64>,
}

impl MlpModel {
    /// Training loss before the first update, then the mean batch loss of each epoch.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn scale_inputs_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.ncols(), x.nrows(), |j, i| {
            (x[(i, j)] - self.x_means[j]) / self.x_scales[j]
        })
    }

    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let pre = self.net.forward_t(&self.params, &self.scale_inputs_t(x));
        pre.last()
            .expect("at least one layer")
            .iter()
            .map(|v| v * self.y_scale + self.y_mean)
            .collect()
    }
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch Adam on squared loss. Inputs and targets are standardized with
/// the training statistics; the weight penalty is `l2/(2n)·‖W‖²` per batch, so
/// a full pass minimizes `(1/(2n))(‖y − ŷ‖² + l2‖W‖²)` on that scale.
pub(crate) fn fit_mlp(x: &DMatrix<f64>, y: &[f64], spec: &MlpSpec) -> Result<MlpModel> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let x_means: Vec<f64> = x.column_iter().map(|c| c.sum() / nf).collect();
    let x_scales: Vec<f64> = x
        .column_iter()
        .zip(&x_means)
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
            if sd < crate::data::DEGENERATE_SD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / nf).sqrt();
    let y_scale = if y_sd < crate::data::DEGENERATE_SD {
        1.0
    } else {
        y_sd
    };

    let net = MlpNet::new(p, &spec.hidden, spec.activation);
    let mut model = MlpModel {
        params: net.init_params(spec.seed),
        net,
        x_means,
        x_scales,
        y_mean,
        y_scale,
        loss_trace: Vec::with_capacity(spec.epochs + 1),
    };
    let xt = model.scale_inputs_t(x);
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
    let penalty = spec.l2 / nf;

    let (initial, _) = model
        .net
        .loss_and_gradient_t(&model.params, &xt, &ys, penalty);
    model.loss_trace.push(initial);

    // The shuffling stream is separate from the initialization stream.
    let mut rng = rng::seeded(rng::derive_seed(spec.seed, 1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut m1 = vec![0.0; model.params.len()];
    let mut m2 = vec![0.0; model.params.len()];
    let mut step = 0i32;
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(spec.batch) {
            let xb = xt.select_columns(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = model.net.loss_and_gradient_t(&model.params, &xb, &yb, penalty);
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - ADAM_B1.powi(step);
            let c2 = 1.0 - ADAM_B2.powi(step);
            for (((w, g), a), b) in model
                .params
                .iter_mut()
                .zip(&grad)
                .zip(m1.iter_mut())
                .zip(m2.iter_mut())
            {
                *a = ADAM_B1 * *a + (1.0 - ADAM_B1) * g;
                *b = ADAM_B2 * *b + (1.0 - ADAM_B2) * g * g;
                *w -= spec.step_size * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
            }
        }
        let mean_loss = epoch_loss / nf;
        if !mean_loss.is_finite() {
            return Err(Error::NonConvergence {
                learner: "mlp",
                iterations: epoch + 1,
                last_change: mean_loss,
            });
        }
        model.loss_trace.push(mean_loss);
    }
    Ok(model)
}
