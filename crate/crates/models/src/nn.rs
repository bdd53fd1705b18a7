//! A small dense-network engine with hand-written reverse-mode gradients.
//!
//! Batches are row-major `batch x features` matrices and weights are stored
//! `inputs x outputs`, so a layer computes `act(X W + b)`.

use gwhi_core::linalg::Cholesky;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
    Linear,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu { slope: LEAKY_SLOPE }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot_uniform(inputs, outputs, rng),
            bias: bias.then(|| Array1::zeros(outputs)),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn pre_activation(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            z += b;
        }
        z
    }
}

/// Layer inputs and pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weight: Vec<Array2<f64>>,
    pub bias: Vec<Option<Array1<f64>>>,
}

impl Grads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weight: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: net
                .layers
                .iter()
                .map(|l| l.bias.as_ref().map(|b| Array1::zeros(b.len())))
                .collect(),
        }
    }

    /// Parameter gradients in the same order as [`DenseNet::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.push(w.as_slice().expect("standard layout"));
            if let Some(b) = b {
                out.push(b.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

impl DenseNet {
    /// Builds a net through `widths` (input first); layer `i` maps
    /// `widths[i] -> widths[i+1]` with `activations[i]` and `bias[i]`.
    pub fn new(widths: &[usize], activations: &[Activation], bias: &[bool], rng: &mut impl Rng) -> Result<Self> {
        let depth = widths.len().saturating_sub(1);
        if depth == 0 || activations.len() != depth || bias.len() != depth {
            return Err(Error::invalid("layer widths, activations and bias flags disagree"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let layers = (0..depth)
            .map(|i| Dense::new(widths[i], widths[i + 1], activations[i], bias[i], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.outputs()));
        w
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            let act = l.activation;
            h = l.pre_activation(&h).mapv_into(|v| act.apply(v));
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &Array2<f64>) -> Result<Tape> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let z = l.pre_activation(&h);
            let act = l.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = out;
        }
        Ok(Tape {
            inputs,
            pre,
            output: h,
        })
    }

    /// Gradients of a scalar loss given `upstream = dL/d(output)`. Returns
    /// the parameter gradients and `dL/d(input)`.
    pub fn backward(&self, tape: &Tape, upstream: &Array2<f64>) -> (Grads, Array2<f64>) {
        let mut grads = Grads::zeros_like(self);
        let mut g = upstream.clone();
        let mut out = tape.output.clone();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let act = l.activation;
            // dL/dz = dL/dy * act'(z)
            ndarray::Zip::from(&mut g)
                .and(&tape.pre[i])
                .and(&out)
                .for_each(|g, &z, &y| *g *= act.derivative(z, y));
            grads.weight[i] = tape.inputs[i].t().dot(&g);
            if l.bias.is_some() {
                grads.bias[i] = Some(g.sum_axis(Axis(0)));
            }
            let next = g.dot(&l.weight.t());
            if i > 0 {
                let prev = self.layers[i - 1].activation;
                out = tape.pre[i - 1].mapv(|v| prev.apply(v));
            }
            g = next;
        }
        (grads, g)
    }

    /// `Σ θ²` over all weights and biases.
    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight.iter().map(|w| w * w).sum::<f64>()
                    + l.bias.as_ref().map_or(0.0, |b| b.iter().map(|v| v * v).sum())
            })
            .sum()
    }

    /// Adds `coef · ∇Σθ² = 2·coef·θ` to `grads`.
    pub fn add_sq_norm_grad(&self, grads: &mut Grads, coef: f64) {
        for (i, l) in self.layers.iter().enumerate() {
            grads.weight[i].scaled_add(2.0 * coef, &l.weight);
            if let (Some(g), Some(b)) = (grads.bias[i].as_mut(), l.bias.as_ref()) {
                g.scaled_add(2.0 * coef, b);
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            if let Some(b) = l.bias.as_mut() {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            if let Some(b) = &l.bias {
                out.extend(b.iter());
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut at = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[at..at + p.len()]);
            at += p.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
        })
    }
}

/// Adam with bias correction over any list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.m.len() || params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                actual: total,
            });
        }
        self.step_count += 1;
        let c1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let c2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch {
                    expected: p.len(),
                    actual: g.len(),
                });
            }
            for (w, &gi) in p.iter_mut().zip(g) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

/// `trace(G) - logdet(G)` for the ridged Gram matrix `G = ZᵀZ + ridge·I`,
/// and its gradient `2Z - 2Z G⁻¹` with respect to `Z`.
pub fn gram_trace_logdet(z: &Array2<f64>, ridge: f64) -> Result<(f64, Array2<f64>)> {
    if z.nrows() == 0 {
        return Err(Error::invalid("diversity term needs at least one embedding"));
    }
    if !(ridge > 0.0) {
        return Err(Error::invalid("diversity ridge must be positive"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(gwhi_core::Error::NonFinite("embedding matrix".into()).into());
    }
    let h = z.ncols();
    let mut g = z.t().dot(z);
    for i in 0..h {
        g[[i, i]] += ridge;
    }
    let trace: f64 = (0..h).map(|i| g[[i, i]]).sum();
    let flat: Vec<f64> = g.iter().copied().collect();
    let chol = Cholesky::factor(&flat, h)?;
    let inv = Array2::from_shape_vec((h, h), chol.inverse()).expect("h x h");
    let grad = 2.0 * z - 2.0 * z.dot(&inv);
    Ok((trace - chol.log_det(), grad))
}

/// Row-major matrix from equal-length rows.
pub fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::ShapeMismatch {
            expected: cols,
            actual: r.len(),
        });
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), rows.concat()).expect("checked shape"))
}

/// Index batches over a shuffled `0..n`; the last batch may be short.
pub fn shuffled_batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

pub fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}
