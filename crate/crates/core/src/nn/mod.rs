//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! A network stores one [`LayerParams`] per affine layer; layer `k` maps
//! `dims[k]` inputs to `dims[k + 1]` outputs with a row-major
//! `dims[k + 1] x dims[k]` weight matrix. The hidden activation is applied
//! after every layer except the last, whose output is linear.

mod adam;
mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backward called without a recorded forward pass")]
    NoForwardRecorded,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias)) {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Parameters (or gradients) of a whole network, layer by layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| LayerParams::zeros(l.in_dim, l.out_dim)).collect() }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every scalar, weights before biases within each layer.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Activations kept from the last recorded batch forward pass.
#[derive(Clone, Debug)]
struct Trace {
    batch: usize,
    /// `inputs[k]` is the flattened `batch x dims[k]` input of layer `k`.
    inputs: Vec<Vec<f64>>,
    /// `pre[k]` is the flattened `batch x dims[k + 1]` pre-activation of layer `k`.
    pre: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Params,
    activation: Activation,
    trace: Option<Trace>,
}

impl Mlp {
    /// Uniform Glorot initialisation with zero biases.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "a network needs at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = LayerParams::zeros(fan_in, fan_out);
                layer.weights.iter_mut().for_each(|x| *x = rng.gen_range(-limit..=limit));
                layer
            })
            .collect();
        Self { dims: dims.to_vec(), params: Params { layers }, activation, trace: None }
    }

    pub fn from_params(params: Params, activation: Activation) -> Result<Self, NnError> {
        let mut dims = Vec::with_capacity(params.layers.len() + 1);
        for layer in &params.layers {
            if let Some(&prev) = dims.last() {
                if prev != layer.in_dim {
                    return Err(NnError::DimensionMismatch { expected: prev, got: layer.in_dim });
                }
            } else {
                dims.push(layer.in_dim);
            }
            if layer.weights.len() != layer.in_dim * layer.out_dim {
                return Err(NnError::DimensionMismatch { expected: layer.in_dim * layer.out_dim, got: layer.weights.len() });
            }
            if layer.bias.len() != layer.out_dim {
                return Err(NnError::DimensionMismatch { expected: layer.out_dim, got: layer.bias.len() });
            }
            dims.push(layer.out_dim);
        }
        if dims.len() < 2 {
            return Err(NnError::DimensionMismatch { expected: 1, got: 0 });
        }
        Ok(Self { dims, params, activation, trace: None })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    /// Copies parameters from another network of identical shape.
    pub fn copy_from(&mut self, other: &Mlp) {
        assert_eq!(self.dims, other.dims);
        self.params.clone_from(&other.params);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.dims[0] {
            return Err(NnError::DimensionMismatch { expected: self.dims[0], got: input.len() });
        }
        let last = self.params.layers.len() - 1;
        let mut current = input.to_vec();
        for (k, layer) in self.params.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            layer.affine(&current, &mut next);
            if k < last {
                next.iter_mut().for_each(|x| *x = self.activation.apply(*x));
            }
            current = next;
        }
        Ok(current)
    }

    /// Batch forward pass that records activations for [`Mlp::backward`].
    pub fn forward_recorded(&mut self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
        let batch = inputs.len();
        let d0 = self.dims[0];
        let mut flat = Vec::with_capacity(batch * d0);
        for x in inputs {
            if x.len() != d0 {
                return Err(NnError::DimensionMismatch { expected: d0, got: x.len() });
            }
            flat.extend_from_slice(x);
        }
        let last = self.params.layers.len() - 1;
        let mut trace = Trace { batch, inputs: Vec::new(), pre: Vec::new() };
        let mut current = flat;
        for (k, layer) in self.params.layers.iter().enumerate() {
            let mut pre = vec![0.0; batch * layer.out_dim];
            for (x, out) in current.chunks_exact(layer.in_dim).zip(pre.chunks_exact_mut(layer.out_dim)) {
                layer.affine(x, out);
            }
            let next = if k < last { pre.iter().map(|&z| self.activation.apply(z)).collect() } else { pre.clone() };
            trace.inputs.push(current);
            trace.pre.push(pre);
            current = next;
        }
        let out_dim = self.output_dim();
        let outputs = current.chunks_exact(out_dim).map(|c| c.to_vec()).collect();
        self.trace = Some(trace);
        Ok(outputs)
    }

    /// Gradients of `sum_i <output_grads[i], f(x_i)>` with respect to every
    /// parameter, for the batch recorded by the last `forward_recorded`.
    pub fn backward(&self, output_grads: &[Vec<f64>]) -> Result<Params, NnError> {
        let trace = self.trace.as_ref().ok_or(NnError::NoForwardRecorded)?;
        if output_grads.len() != trace.batch {
            return Err(NnError::DimensionMismatch { expected: trace.batch, got: output_grads.len() });
        }
        let out_dim = self.output_dim();
        let mut delta = Vec::with_capacity(trace.batch * out_dim);
        for g in output_grads {
            if g.len() != out_dim {
                return Err(NnError::DimensionMismatch { expected: out_dim, got: g.len() });
            }
            delta.extend_from_slice(g);
        }
        let mut grads = self.params.zeros_like();
        for k in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[k];
            let grad = &mut grads.layers[k];
            let input = &trace.inputs[k];
            for (d, x) in delta.chunks_exact(layer.out_dim).zip(input.chunks_exact(layer.in_dim)) {
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    grad.bias[o] += dv;
                    let row = &mut grad.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (w, &xi) in row.iter_mut().zip(x) {
                        *w += dv * xi;
                    }
                }
            }
            if k == 0 {
                break;
            }
            // propagate to layer k's input, which is activation(pre[k - 1])
            let prev_pre = &trace.pre[k - 1];
            let mut next_delta = vec![0.0; trace.batch * layer.in_dim];
            for ((d, nd), z) in
                delta.chunks_exact(layer.out_dim).zip(next_delta.chunks_exact_mut(layer.in_dim)).zip(prev_pre.chunks_exact(layer.in_dim))
            {
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, &w) in nd.iter_mut().zip(row) {
                        *n += dv * w;
                    }
                }
                for (n, &zv) in nd.iter_mut().zip(z) {
                    *n *= self.activation.derivative(zv);
                }
            }
            delta = next_delta;
        }
        Ok(grads)
    }

    pub fn clear_trace(&mut self) {
        self.trace = None;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax restricted to `allowed` entries; the rest get probability 0.
pub fn masked_softmax(logits: &[f64], allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = logits.iter().enumerate().filter(|(i, _)| allowed(*i)).map(|(_, &z)| z).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().enumerate().map(|(i, &z)| if allowed(i) { (z - max).exp() } else { 0.0 }).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
