//! Comparison systems: a risk-unaware diffusion model and three
//! risk-conditional schemes that steer generation toward low risk.
//!
//! * risk variable: diffuse `z = x ⊕ r` jointly, guide with the gradient of
//!   `-||r||` on the risk block;
//! * classifier-free: condition the score on `r` (randomly masked), sample
//!   with `(1 + γ) s(x, t, 0) - γ s(x, t, ∅)`;
//! * risk regressor: fit `r̂ = softplus(h(x(t), t))` and add
//!   `-γ ∇ Σ softplus(h_i)` to the score.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::RiskSample;
use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, clip_grad_norm, sigmoid, softplus, ModelConfig, OptimizerState, ScoreBatch, ScoreModel};
use crate::noise::NoiseKind;
use crate::sampling::{reverse_sample, SamplerConfig, ScoreFn};
use crate::score::ScoreNetwork;
use crate::sde::SdeSpec;
use crate::tensor::Tensor;
use crate::training::{fit, risk_condition, Conditioning, TrainConfig, TrainingTrace};

/// Mask probability for classifier-free training.
pub const DEFAULT_MASK_PROB: f64 = 0.1;
pub const DEFAULT_GUIDANCE: f64 = 1.0;

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Standard,
    RiskVariable,
    ClassifierFree,
    RiskRegressor,
    RiskSensitive,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Standard,
        Method::RiskVariable,
        Method::ClassifierFree,
        Method::RiskRegressor,
        Method::RiskSensitive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::RiskVariable => "risk-variable",
            Method::ClassifierFree => "classifier-free",
            Method::RiskRegressor => "risk-regressor",
            Method::RiskSensitive => "risk-sensitive",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

fn zero_risk(data: &[RiskSample]) -> Vec<RiskSample> {
    data.iter().map(|s| RiskSample::clean(s.x0.clone())).collect()
}

/// Ordinary denoising score matching on the observed samples, risk ignored.
pub fn train_standard(net: &mut ScoreNetwork, data: &[RiskSample], config: &TrainConfig) -> Result<TrainingTrace> {
    fit(net, &zero_risk(data), NoiseKind::Gaussian, Conditioning::None, None, config)
}

/// Concatenates each sample with its risk: `z = x ⊕ r`.
pub fn augment_with_risk(data: &[RiskSample]) -> Vec<RiskSample> {
    data.iter()
        .map(|s| {
            let mut z = s.x0.clone();
            z.extend_from_slice(&s.r);
            RiskSample::clean(z)
        })
        .collect()
}

/// Splits generated `z` rows into the data block and the risk block.
pub fn split_augmented(z: &Tensor) -> Result<(Tensor, Tensor)> {
    let w = z.cols();
    if w % 2 != 0 {
        return invalid("augmented rows must have even width");
    }
    let d = w / 2;
    let mut x = Vec::with_capacity(z.rows() * d);
    let mut r = Vec::with_capacity(z.rows() * d);
    for i in 0..z.rows() {
        x.extend_from_slice(&z.row(i)[..d]);
        r.extend_from_slice(&z.row(i)[d..]);
    }
    Ok((Tensor::new(x, vec![z.rows(), d])?, Tensor::new(r, vec![z.rows(), d])?))
}

/// Standard training on `2D`-dimensional `x ⊕ r`; `net` must be `2D` wide.
pub fn train_risk_variable(net: &mut ScoreNetwork, data: &[RiskSample], config: &TrainConfig) -> Result<TrainingTrace> {
    let z = augment_with_risk(data);
    fit(net, &z, NoiseKind::Gaussian, Conditioning::None, None, config)
}

/// Standard forward process with the observed risk as a masked condition.
/// `net` needs `cond_dim = D + 1`.
pub fn train_classifier_free(
    net: &mut ScoreNetwork,
    data: &[RiskSample],
    mask_prob: f64,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    let labels: Vec<Vec<f64>> = data.iter().map(|s| s.r.clone()).collect();
    fit(
        net,
        &zero_risk(data),
        NoiseKind::Gaussian,
        Conditioning::MaskedRisk { mask_prob },
        Some(&labels),
        config,
    )
}

/// Predicts per-entry risk from a noised state: `r̂ = softplus(h(x(t), t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRegressor {
    pub model: ScoreModel,
    pub spec: SdeSpec,
    pub data_scale: f64,
    pub trained: bool,
}

impl RiskRegressor {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, spec: SdeSpec, data_scale: f64, rng: &mut R) -> Result<Self> {
        if config.cond_dim != 0 {
            return invalid("risk regressor takes no conditioning input");
        }
        Ok(Self {
            model: ScoreModel::new(config, rng)?,
            spec,
            data_scale,
            trained: false,
        })
    }

    fn c_in(&self, t: f64) -> f64 {
        let (u, v0_sq) = self.spec.schedules_unchecked(t);
        1.0 / (u * u * self.data_scale * self.data_scale + v0_sq).sqrt()
    }

    fn batch(&self, x: &Tensor, t: &[f64]) -> Result<(ScoreBatch, Vec<f64>)> {
        let d = self.model.data_dim;
        if x.cols() != d || x.rows() != t.len() {
            return invalid("regressor input shape mismatch");
        }
        let c: Vec<f64> = t.iter().map(|&t| self.c_in(t)).collect();
        let mut scaled = x.clone();
        for (row, ci) in scaled.data_mut().chunks_exact_mut(d).zip(&c) {
            row.iter_mut().for_each(|v| *v *= ci);
        }
        Ok((ScoreBatch::new(scaled, t.to_vec()), c))
    }

    /// Raw outputs `h`.
    pub fn logits(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (b, _) = self.batch(x, t)?;
        self.model.forward_batch(&b)
    }

    pub fn predict(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        Ok(self.logits(x, t)?.map(softplus))
    }

    /// `∇_x [-Σ_i softplus(h_i(x, t))]` per row.
    pub fn guidance_gradient(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        if !self.trained {
            return Err(Error::PreconditionViolation("risk regressor has not been trained".into()));
        }
        let times = vec![t; x.rows()];
        let (b, c) = self.batch(x, &times)?;
        let h = self.model.forward_batch(&b)?;
        let v = h.map(|z| -sigmoid(z));
        let (mut dx, _) = self.model.input_vjp(&b, &v)?;
        let d = self.model.data_dim;
        for (row, ci) in dx.data_mut().chunks_exact_mut(d).zip(&c) {
            row.iter_mut().for_each(|g| *g *= ci);
        }
        Ok(dx)
    }
}

/// Fits the regressor with squared loss on `(x(t), r)` pairs, `x(t)` drawn
/// from the clean forward kernel at uniform `t`.
pub fn train_risk_regressor(reg: &mut RiskRegressor, data: &[RiskSample], config: &TrainConfig) -> Result<TrainingTrace> {
    config.validate()?;
    let d = reg.model.data_dim;
    if data.is_empty() {
        return invalid("training set is empty");
    }
    if data.iter().any(|s| s.x0.len() != d || s.r.len() != d) {
        return invalid("sample dimension differs from the regressor");
    }
    let horizon = reg.spec.horizon;
    let delta = 1e-4 * horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(&reg.model, config.learning_rate);
    let mut trace = TrainingTrace::default();
    let n = config.batch_size;
    for _ in 0..config.steps {
        let mut x = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n * d);
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            let s = &data[rng.gen_range(0..data.len())];
            let t = delta + rng.gen::<f64>() * (horizon - delta);
            let (u, v0_sq) = reg.spec.schedules_unchecked(t);
            let v0 = v0_sq.sqrt();
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                x.push(u * s.x0[j] + v0 * e);
            }
            targets.extend_from_slice(&s.r);
            times.push(t);
        }
        let (b, _) = reg.batch(&Tensor::new(x, vec![n, d])?, &times)?;
        let inv = 1.0 / n as f64;
        let (loss, mut grads) = reg.model.custom_loss_and_grads(&b, |h| {
            let mut l = 0.0;
            let g = h
                .iter()
                .zip(&targets)
                .map(|(&z, &r)| {
                    let e = softplus(z) - r;
                    l += e * e;
                    2.0 * e * sigmoid(z) * inv
                })
                .collect();
            (l * inv, g)
        })?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite regressor loss at step {}", trace.losses.len())));
        }
        if let Some(c) = config.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        adam_step(&mut reg.model, &grads, &mut opt)?;
        trace.losses.push(loss);
        trace.times.push(times.iter().sum::<f64>() * inv);
    }
    reg.trained = true;
    Ok(trace)
}

/// Auxiliary model behind a guidance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Guidance {
    /// Joint score over `x ⊕ r`.
    RiskVariable { joint: ScoreNetwork },
    /// Score conditioned on `[r | masked]`.
    ClassifierFree { conditional: ScoreNetwork },
    RiskRegressor { score: ScoreNetwork, regressor: RiskRegressor },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceKind {
    RiskVariable,
    ClassifierFree,
    RiskRegressor,
}

/// A guided score: the base model plus a `γ`-scaled pull toward low risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRule {
    pub gamma: f64,
    pub guidance: Guidance,
}

impl GuidanceRule {
    pub fn new(guidance: Guidance, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return invalid("guidance scale must be nonnegative");
        }
        match &guidance {
            Guidance::RiskVariable { joint } => {
                if joint.dim() % 2 != 0 || joint.cond_dim() != 0 {
                    return invalid("risk-variable guidance needs an unconditional 2D-wide network");
                }
            }
            Guidance::ClassifierFree { conditional } => {
                if conditional.cond_dim() != conditional.dim() + 1 {
                    return invalid("classifier-free guidance needs a network conditioned on [r | masked]");
                }
            }
            Guidance::RiskRegressor { score, regressor } => {
                if score.cond_dim() != 0 || regressor.model.data_dim != score.dim() {
                    return invalid("regressor and score network disagree");
                }
            }
        }
        Ok(Self { gamma, guidance })
    }

    pub fn kind(&self) -> GuidanceKind {
        match self.guidance {
            Guidance::RiskVariable { .. } => GuidanceKind::RiskVariable,
            Guidance::ClassifierFree { .. } => GuidanceKind::ClassifierFree,
            Guidance::RiskRegressor { .. } => GuidanceKind::RiskRegressor,
        }
    }

    /// Diffusion whose coefficients drive the sampler.
    pub fn spec(&self) -> &SdeSpec {
        match &self.guidance {
            Guidance::RiskVariable { joint } => &joint.spec,
            Guidance::ClassifierFree { conditional } => &conditional.spec,
            Guidance::RiskRegressor { score, .. } => &score.spec,
        }
    }

    /// Score the rule reduces to at `γ = 0`.
    pub fn unguided(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let times = vec![t; x.rows()];
        match &self.guidance {
            Guidance::RiskVariable { joint } => joint.score_batch(x, &times, None),
            Guidance::ClassifierFree { conditional } => {
                let c = condition_rows(x.rows(), conditional.dim(), false)?;
                conditional.score_batch(x, &times, Some(&c))
            }
            Guidance::RiskRegressor { score, .. } => score.score_batch(x, &times, None),
        }
    }
}

fn condition_rows(n: usize, d: usize, masked: bool) -> Result<Tensor> {
    let c = risk_condition(&vec![0.0; d], masked);
    Tensor::new(c.repeat(n), vec![n, d + 1])
}

/// Gradient of `-||r||` on the risk half of each row, zero at `r = 0`.
pub fn risk_norm_gradient(z: &Tensor) -> Result<Tensor> {
    let w = z.cols();
    if w % 2 != 0 {
        return invalid("augmented rows must have even width");
    }
    let d = w / 2;
    let mut g = Tensor::zeros(vec![z.rows(), w]);
    for (row, out) in z.data().chunks_exact(w).zip(g.data_mut().chunks_exact_mut(w)) {
        let norm = row[d..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in d..w {
                out[j] = -row[j] / norm;
            }
        }
    }
    Ok(g)
}

impl ScoreFn for GuidanceRule {
    fn dim(&self) -> usize {
        match &self.guidance {
            Guidance::RiskVariable { joint } => joint.dim(),
            Guidance::ClassifierFree { conditional } => conditional.dim(),
            Guidance::RiskRegressor { score, .. } => score.dim(),
        }
    }

    fn score_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let base = self.unguided(x, t)?;
        if self.gamma == 0.0 {
            return Ok(base);
        }
        let g = self.gamma;
        match &self.guidance {
            Guidance::RiskVariable { .. } => base.add(&risk_norm_gradient(x)?.scale(g)),
            Guidance::ClassifierFree { conditional } => {
                let c = condition_rows(x.rows(), conditional.dim(), true)?;
                let free = conditional.score_batch(x, &vec![t; x.rows()], Some(&c))?;
                base.scale(1.0 + g).sub(&free.scale(g))
            }
            Guidance::RiskRegressor { regressor, .. } => base.add(&regressor.guidance_gradient(x, t)?.scale(g)),
        }
    }
}

/// Reverse sampling with the guided score in place of the network.
pub fn guided_reverse_sample(rule: &GuidanceRule, config: &SamplerConfig, n: usize) -> Result<Tensor> {
    let spec = rule.spec().clone();
    reverse_sample(rule, &spec, config, n)
}
