//! Dense feed-forward network: rectifier hidden layers, softmax output.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One affine layer; `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(format!(
            "network needs at least an input and an output layer of nonzero width, got {widths:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            layers: widths
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// He-normal weights, zero biases.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(widths)?;
        for layer in &mut p.layers {
            let std = (2.0 / layer.inputs() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            layer.weights.mapv_inplace(|_| normal.sample(rng));
        }
        Ok(p)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::InvalidInput("layer widths do not chain".into()));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(Error::InvalidInput("bias length differs from layer width".into()));
        }
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(|l| l.outputs()))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn zeros_like(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
            .collect()
    }

    /// Pre-softmax outputs plus every hidden activation (input first).
    fn logits_with_activations(&self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            acts.push(a);
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        (a, acts)
    }

    /// Row-wise posteriors for a batch (`rows x input_width`).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (mut z, _) = self.logits_with_activations(x);
        softmax_rows(&mut z);
        z
    }

    /// Mean cross-entropy in nats and its gradient with respect to every
    /// parameter.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, labels: &[usize]) -> (f64, Vec<DenseLayer>) {
        assert_eq!(x.nrows(), labels.len());
        let batch = labels.len() as f64;
        let (logits, acts) = self.logits_with_activations(x);
        let mut delta = logits;
        let mut loss = 0.0;
        for (mut row, &label) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            row.mapv_inplace(|v| (v - lse).exp());
            row[label] -= 1.0;
        }
        delta /= batch;

        let mut grads = self.zeros_like();
        for l in (0..self.layers.len()).rev() {
            grads[l].weights = delta.t().dot(&acts[l]);
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights);
                Zip::from(&mut back)
                    .and(&acts[l])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
                delta = back;
            }
        }
        (loss / batch, grads)
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Posterior over the output classes for a single input vector.
pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_width() {
        return Err(Error::InvalidInput(format!(
            "input has {} entries, network expects {}",
            x.len(),
            p.input_width()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite network input".into()));
    }
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    Ok(p.forward_batch(view).row(0).to_vec())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut MlpParams, grads: &[DenseLayer], lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let step_size = lr * c2.sqrt() / c1;
        let eps_hat = eps * c2.sqrt();
        for (((layer, g), m), v) in params
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let rule = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps_hat);
            };
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(rule);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(rule);
        }
    }
}
