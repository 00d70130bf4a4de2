//! Score networks: an MLP wrapped with time-dependent input and output
//! scalings, `s(x, t) = c_out(t) * F(c_in(t) * x, t)`.
//!
//! `c_in = 1 / sqrt(u^2 s_d^2 + v0^2)` keeps the network input near unit
//! scale and `c_out = 1 / max(v0, floor)` matches the magnitude of the
//! score near the data.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{ScoreBatch, ScoreModel};
use crate::sde::SdeSpec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetwork {
    pub model: ScoreModel,
    pub spec: SdeSpec,
    /// Typical per-coordinate spread of the training data.
    pub data_scale: f64,
    /// Floor on `v0` inside `c_out`.
    pub min_noise: f64,
}

pub const DEFAULT_MIN_NOISE: f64 = 1e-3;

impl ScoreNetwork {
    pub fn new(model: ScoreModel, spec: SdeSpec, data_scale: f64) -> Result<Self> {
        spec.validate()?;
        model.validate()?;
        if !(data_scale > 0.0) || !data_scale.is_finite() {
            return invalid("data scale must be positive");
        }
        Ok(Self {
            model,
            spec,
            data_scale,
            min_noise: DEFAULT_MIN_NOISE,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.data_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.model.cond_dim
    }

    /// `(c_in, c_out)` at time `t`.
    pub fn scalings(&self, t: f64) -> (f64, f64) {
        let (u, v0_sq) = self.spec.schedules_unchecked(t);
        let c_in = 1.0 / (u * u * self.data_scale * self.data_scale + v0_sq).sqrt();
        let c_out = 1.0 / v0_sq.sqrt().max(self.min_noise);
        (c_in, c_out)
    }

    /// Network input and per-row `c_out` for a batch of states.
    pub(crate) fn prepare(&self, x: &Tensor, t: &[f64], cond: Option<&Tensor>) -> Result<(ScoreBatch, Vec<f64>)> {
        let n = x.rows();
        let d = self.dim();
        if x.shape() != [n, d] || t.len() != n {
            return invalid(format!("expected {n} states of dimension {d}"));
        }
        let mut scaled = x.clone();
        let mut c_out = Vec::with_capacity(n);
        for (i, row) in scaled.data_mut().chunks_exact_mut(d).enumerate() {
            let (ci, co) = self.scalings(t[i]);
            row.iter_mut().for_each(|v| *v *= ci);
            c_out.push(co);
        }
        let mut batch = ScoreBatch::new(scaled, t.to_vec());
        if let Some(c) = cond {
            batch = batch.with_cond(c.clone());
        }
        Ok((batch, c_out))
    }

    pub fn score_batch(&self, x: &Tensor, t: &[f64], cond: Option<&Tensor>) -> Result<Tensor> {
        let (batch, c_out) = self.prepare(x, t, cond)?;
        let mut out = self.model.forward_batch(&batch)?;
        let d = self.dim();
        for (row, co) in out.data_mut().chunks_exact_mut(d).zip(&c_out) {
            row.iter_mut().for_each(|v| *v *= co);
        }
        Ok(out)
    }

    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let x = Tensor::new(x.to_vec(), vec![1, x.len()])?;
        Ok(self.score_batch(&x, &[t], None)?.into_data())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Root-mean-square of a robust per-coordinate spread (`1.4826 * MAD`), so
/// heavy-tailed corruption does not inflate the input scaling.
pub fn data_scale(x: &Tensor) -> f64 {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 || d == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for j in 0..d {
        let mut col: Vec<f64> = (0..n).map(|i| x.row(i)[j]).collect();
        let m = median(&mut col);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - m).abs()).collect();
        let mad = 1.4826 * median(&mut dev);
        total += mad * mad;
    }
    let s = (total / d as f64).sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}
