//! A small multilayer perceptron with hand-written reverse-mode gradients
//! and an Adam optimizer.
//!
//! The network input for a row is `[x (D) | time features (E) | condition (C)]`.
//! Time features are `t` followed by `sin(2^k pi t), cos(2^k pi t)` for
//! `k = 0..K`, so `E = 1 + 2K`. The final layer is zero-initialized, so a
//! fresh model outputs zero everywhere.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Softplus,
    #[default]
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Silu => z * sigmoid(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sinusoidal time features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub frequencies: usize,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self { frequencies: 4 }
    }
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        1 + 2 * self.frequencies
    }

    pub fn write(&self, t: f64, out: &mut [f64]) {
        out[0] = t;
        let mut freq = PI;
        for k in 0..self.frequencies {
            out[1 + 2 * k] = (freq * t).sin();
            out[2 + 2 * k] = (freq * t).cos();
            freq *= 2.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub data_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_frequencies")]
    pub time_frequencies: usize,
    #[serde(default)]
    pub cond_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_frequencies() -> usize {
    4
}

impl ModelConfig {
    pub fn new(data_dim: usize) -> Self {
        Self {
            data_dim,
            hidden: default_hidden(),
            time_frequencies: default_frequencies(),
            cond_dim: 0,
            activation: Activation::default(),
        }
    }
}

/// Fully connected layer; `weight` is stored `input x output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn input(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// The score network `s_theta(x, t)` (optionally with extra conditioning inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub embedding: TimeEmbedding,
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

/// A batch of network inputs. `x` is `n x D`, `cond` is `n x C` when present.
#[derive(Debug, Clone)]
pub struct ScoreBatch {
    pub x: Tensor,
    pub t: Vec<f64>,
    pub cond: Option<Tensor>,
}

impl ScoreBatch {
    pub fn new(x: Tensor, t: Vec<f64>) -> Self {
        Self { x, t, cond: None }
    }

    pub fn with_cond(mut self, cond: Tensor) -> Self {
        self.cond = Some(cond);
        self
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Activations kept from a forward pass for the backward pass.
struct Trace {
    /// inputs to each layer (`acts[0]` is the network input)
    acts: Vec<Vec<f64>>,
    /// pre-activations of hidden layers
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ScoreModel {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        if config.data_dim == 0 {
            return invalid("data dimension must be positive");
        }
        if config.hidden.iter().any(|&w| w == 0) {
            return invalid("hidden widths must be positive");
        }
        let embedding = TimeEmbedding {
            frequencies: config.time_frequencies,
        };
        let mut widths = vec![config.data_dim + embedding.width() + config.cond_dim];
        widths.extend_from_slice(&config.hidden);
        widths.push(config.data_dim);
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = if l + 1 == n_layers {
                vec![0.0; fan_in * fan_out]
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect()
            };
            layers.push(Dense {
                weight: Tensor::new(weight, vec![fan_in, fan_out])?,
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        Ok(Self {
            data_dim: config.data_dim,
            cond_dim: config.cond_dim,
            embedding,
            activation: config.activation,
            layers,
        })
    }

    /// Builds a model from explicit layers, validating the widths.
    pub fn from_layers(
        data_dim: usize,
        cond_dim: usize,
        embedding: TimeEmbedding,
        activation: Activation,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        let model = Self {
            data_dim,
            cond_dim,
            embedding,
            activation,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return invalid("model has no layers");
        }
        let mut width = self.input_width();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.shape().len() != 2 || layer.input() != width {
                return invalid(format!("layer {i} expects input width {width}"));
            }
            if layer.bias.len() != layer.output() {
                return invalid(format!("layer {i} bias width mismatch"));
            }
            width = layer.output();
        }
        if width != self.data_dim {
            return invalid(format!(
                "output width {width} differs from data dimension {}",
                self.data_dim
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.data_dim + self.embedding.width() + self.cond_dim
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Dense::output));
        w
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// `s_theta(x, t)` for a single point.
    pub fn forward(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        if self.cond_dim != 0 {
            return invalid("conditional model needs forward_cond");
        }
        self.forward_cond(x, t, &[])
    }

    pub fn forward_cond(&self, x: &Tensor, t: f64, cond: &[f64]) -> Result<Tensor> {
        if x.len() != self.data_dim {
            return invalid(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.data_dim
            ));
        }
        let batch = ScoreBatch {
            x: Tensor::new(x.data().to_vec(), vec![1, self.data_dim])?,
            t: vec![t],
            cond: (self.cond_dim > 0)
                .then(|| Tensor::new(cond.to_vec(), vec![1, cond.len()]))
                .transpose()?,
        };
        let out = self.forward_batch(&batch)?;
        Ok(Tensor::vector(out.into_data()))
    }

    /// Batched forward pass; returns an `n x D` tensor.
    pub fn forward_batch(&self, batch: &ScoreBatch) -> Result<Tensor> {
        let input = self.assemble_input(batch)?;
        let n = batch.len();
        let out = self.run(input, n, false).output;
        Tensor::new(out, vec![n, self.data_dim])
    }

    fn assemble_input(&self, batch: &ScoreBatch) -> Result<Vec<f64>> {
        let n = batch.len();
        let d = self.data_dim;
        if batch.x.shape() != [n, d] {
            return invalid(format!(
                "batch x has shape {:?}, expected [{n}, {d}]",
                batch.x.shape()
            ));
        }
        match (&batch.cond, self.cond_dim) {
            (None, 0) => {}
            (Some(c), cd) if cd > 0 && c.shape() == [n, cd] => {}
            _ => return invalid("conditioning input does not match the model"),
        }
        let e = self.embedding.width();
        let width = self.input_width();
        let mut input = vec![0.0; n * width];
        for i in 0..n {
            let row = &mut input[i * width..(i + 1) * width];
            row[..d].copy_from_slice(batch.x.row(i));
            self.embedding.write(batch.t[i], &mut row[d..d + e]);
            if let Some(c) = &batch.cond {
                row[d + e..].copy_from_slice(c.row(i));
            }
        }
        Ok(input)
    }

    fn run(&self, input: Vec<f64>, n: usize, keep: bool) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = Vec::new();
        let mut pre = Vec::new();
        let mut cur = input;
        for (l, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (layer.input(), layer.output());
            let mut z = Vec::with_capacity(n * fo);
            for _ in 0..n {
                z.extend_from_slice(layer.bias.data());
            }
            gemm(n, fi, fo, &cur, layer.weight.data(), &mut z, true);
            if keep {
                acts.push(std::mem::take(&mut cur));
            }
            if l == last {
                cur = z;
            } else {
                let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                if keep {
                    pre.push(z);
                }
                cur = a;
            }
        }
        Trace {
            acts,
            pre,
            output: cur,
        }
    }

    /// Backpropagates `d_out` (`n x D`); returns parameter gradients and the
    /// gradient with respect to the full network input (`n x input_width`).
    fn backward(&self, trace: &Trace, d_out: Vec<f64>, n: usize) -> (Vec<Tensor>, Vec<f64>) {
        let mut grads: Vec<Tensor> = Vec::with_capacity(2 * self.layers.len());
        let mut dz = d_out;
        let mut d_input = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (fi, fo) = (layer.input(), layer.output());
            let mut dw = vec![0.0; fi * fo];
            gemm_tn(fi, n, fo, &trace.acts[l], &dz, &mut dw, false);
            let mut db = vec![0.0; fo];
            for row in dz.chunks_exact(fo) {
                for (b, v) in db.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut da = vec![0.0; n * fi];
            gemm_nt(n, fo, fi, &dz, layer.weight.data(), &mut da, false);
            grads.push(Tensor::new(db, vec![fo]).expect("bias grad shape"));
            grads.push(Tensor::new(dw, vec![fi, fo]).expect("weight grad shape"));
            if l == 0 {
                d_input = da;
            } else {
                let pre = &trace.pre[l - 1];
                for (g, &z) in da.iter_mut().zip(pre) {
                    *g *= self.activation.derivative(z);
                }
                dz = da;
            }
        }
        grads.reverse();
        (grads, d_input)
    }

    /// Weighted mean squared error `(1/n) sum_i w_i ||s(x_i, t_i) - y_i||^2`
    /// and its gradients with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        batch: &ScoreBatch,
        targets: &Tensor,
        weights: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        let n = batch.len();
        if n == 0 {
            return invalid("empty batch");
        }
        if weights.len() != n || targets.shape() != [n, self.data_dim] {
            return invalid("targets or weights do not match the batch");
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return invalid("sample weights must be nonnegative");
        }
        let input = self.assemble_input(batch)?;
        let trace = self.run(input, n, true);
        let d = self.data_dim;
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut d_out = vec![0.0; n * d];
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                let r = trace.output[i * d + j] - targets.data()[i * d + j];
                loss += w * r * r;
                d_out[i * d + j] = 2.0 * w * r * inv_n;
            }
        }
        let (grads, _) = self.backward(&trace, d_out, n);
        Ok((loss * inv_n, grads))
    }

    /// Runs the batch, lets `loss` map the flat output to `(value, d value /
    /// d output)`, and backpropagates to the parameters.
    pub fn custom_loss_and_grads<F>(&self, batch: &ScoreBatch, loss: F) -> Result<(f64, Vec<Tensor>)>
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let n = batch.len();
        if n == 0 {
            return invalid("empty batch");
        }
        let input = self.assemble_input(batch)?;
        let trace = self.run(input, n, true);
        let (value, d_out) = loss(&trace.output);
        if d_out.len() != trace.output.len() {
            return invalid("loss gradient does not match the output");
        }
        let (grads, _) = self.backward(&trace, d_out, n);
        Ok((value, grads))
    }

    /// Vector-Jacobian product with respect to `x`: returns `J^T v` per row,
    /// where `J = d s(x, t) / d x`. Also returns the forward output.
    pub fn input_vjp(&self, batch: &ScoreBatch, v: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = batch.len();
        let d = self.data_dim;
        if v.shape() != [n, d] {
            return invalid("cotangent shape mismatch");
        }
        let input = self.assemble_input(batch)?;
        let trace = self.run(input, n, true);
        let output = Tensor::new(trace.output.clone(), vec![n, d])?;
        let (_, d_input) = self.backward(&trace, v.data().to_vec(), n);
        let width = self.input_width();
        let mut dx = Vec::with_capacity(n * d);
        for row in d_input.chunks_exact(width) {
            dx.extend_from_slice(&row[..d]);
        }
        Ok((Tensor::new(dx, vec![n, d])?, output))
    }
}

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(model: &ScoreModel, learning_rate: f64) -> Self {
        let zeros = |m: &ScoreModel| -> Vec<Tensor> {
            m.parameters()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect()
        };
        Self {
            first: zeros(model),
            second: zeros(model),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut ScoreModel, grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    let params = model.parameters_mut();
    if params.len() != grads.len()
        || params.len() != state.first.len()
        || params.len() != state.second.len()
    {
        return invalid("gradient list does not match the model parameters");
    }
    for ((p, g), (m, v)) in params
        .iter()
        .zip(grads)
        .zip(state.first.iter().zip(&state.second))
    {
        if !p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v) {
            return invalid(format!(
                "gradient shape {:?} differs from parameter {:?}",
                g.shape(),
                p.shape()
            ));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for ((p, g), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
