//! Small dense ReLU networks with hand-written backpropagation.
//!
//! Layout: hidden layers use ReLU, the output layer is linear. Parameters are
//! flattened as `[W0 (row-major, out × in), b0, W1, b1, ...]`, which is the
//! layout [`GradientBuffer`] follows.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat gradient (or update direction) congruent with a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer(pub Vec<f64>);

impl GradientBuffer {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_scaled(&mut self, other: &GradientBuffer, k: f64) {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        self.0
            .iter_mut()
            .zip(&other.0)
            .for_each(|(a, b)| *a += k * b);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    GlorotUniform,
    /// Normal with standard deviation sqrt(2 / fan_in).
    HeNormal,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, init: Init, rng: &mut R) -> Self {
        let weight = match init {
            Init::Zeros => Array2::zeros((fan_out, fan_in)),
            Init::GlorotUniform => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng))
            }
            Init::HeNormal => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
                Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng))
            }
        };
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }
}

/// Per-layer inputs saved by [`Mlp::forward_cached`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Activations feeding layer `l` (the network input for `l = 0`).
    pub fn layer_input(&self, l: usize) -> &Array2<f64> {
        &self.inputs[l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [input, hidden..., output]`; `inits` has one entry per layer.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], inits: &[Init], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(crate::error::invalid(format!(
                "bad layer widths {widths:?}"
            )));
        }
        if inits.len() != widths.len() - 1 {
            return Err(crate::error::invalid("one initializer per layer required"));
        }
        let layers = widths
            .windows(2)
            .zip(inits)
            .map(|(w, &init)| Dense::new(w[0], w[1], init, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(crate::error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].fan_out(),
                    actual: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::DimensionMismatch {
                    expected: l.fan_out(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = self.layers[0].affine(x);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            h = layer.affine(h.view());
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Array1<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward(view)?.row(0).to_owned())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let next = layer.affine(h.view());
            inputs.push(h);
            h = next;
            if l + 1 < self.layers.len() {
                relu_inplace(&mut h);
            }
        }
        Ok(ForwardCache { inputs, output: h })
    }

    /// Gradient of `sum_ij d_output[i,j] * output[i,j]` with respect to the
    /// parameters.
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView2<f64>) -> GradientBuffer {
        let mut per_layer: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            let d_w = delta.t().dot(input);
            let d_b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut d_in = delta.dot(&layer.weight);
                ndarray::Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = d_in;
            }
            per_layer.push((d_w, d_b));
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (d_w, d_b) in &per_layer {
            flat.extend(d_w.iter().copied());
            flat.extend(d_b.iter().copied());
        }
        GradientBuffer(flat)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            flat.extend(l.weight.iter().copied());
            flat.extend(l.bias.iter().copied());
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// `params += step * direction`.
    pub fn step(&mut self, direction: &GradientBuffer, step: f64) {
        assert_eq!(direction.len(), self.n_params(), "gradient length mismatch");
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w += step * direction.0[off];
                off += 1;
            }
        }
    }
}

/// Scalar-output network over `(context, action feature)` pairs.
///
/// Evaluating every action for a batch of contexts splits the first layer into
/// a context part and an action part so the concatenated inputs are never
/// materialized.
pub fn forward_pairs(
    net: &Mlp,
    contexts: ArrayView2<f64>,
    action_features: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let d_x = contexts.ncols();
    let d_a = action_features.ncols();
    if d_x + d_a != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            actual: d_x + d_a,
        });
    }
    if net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: net.output_dim(),
        });
    }
    let first = &net.layers[0];
    let w_x = first.weight.slice(s![.., ..d_x]);
    let w_a = first.weight.slice(s![.., d_x..]);
    let mut part_x = contexts.dot(&w_x.t());
    part_x += &first.bias;
    let part_a = action_features.dot(&w_a.t());

    let n = contexts.nrows();
    let n_actions = action_features.nrows();
    let h0 = first.fan_out();
    let mut out = Array2::zeros((n, n_actions));
    const CHUNK: usize = 128;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let rows = (end - start) * n_actions;
        let mut h = Array2::zeros((rows, h0));
        for (ci, i) in (start..end).enumerate() {
            let px = part_x.row(i);
            let mut block = h.slice_mut(s![ci * n_actions..(ci + 1) * n_actions, ..]);
            block.assign(&part_a);
            block += &px;
        }
        for layer in &net.layers[1..] {
            relu_inplace(&mut h);
            h = layer.affine(h.view());
        }
        let flat = h.column(0);
        for (ci, i) in (start..end).enumerate() {
            out.row_mut(i)
                .assign(&flat.slice(s![ci * n_actions..(ci + 1) * n_actions]));
        }
        start = end;
    }
    Ok(out)
}

/// Concatenates a context row and an action-feature row.
pub fn pair_input(context: ArrayView1<f64>, feature: ArrayView1<f64>) -> Vec<f64> {
    context.iter().chain(feature.iter()).copied().collect()
}

pub fn relu_inplace(h: &mut Array2<f64>) {
    h.mapv_inplace(|v| v.max(0.0));
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Row-wise log-softmax (log-sum-exp with max subtraction).
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut lp = logits.clone();
    for mut row in lp.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    lp
}
