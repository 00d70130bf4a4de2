//! Risk-free score matching.
//!
//! Each step draws samples, picks `t` inside the sample's stability interval,
//! forms `x(t) = u x(0) + v(r, t) eta` and regresses the score onto
//! `-eta / v(r, t)`. Samples whose interval is empty contribute zero.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::RiskSample;
use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, clip_grad_norm, OptimizerState};
use crate::noise::{psi_cauchy, NoiseKind};
use crate::score::ScoreNetwork;
use crate::sde::{check_risk, SdeSpec, StabilityInterval};
use crate::tensor::Tensor;

/// Loss weight `lambda(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    Uniform,
    /// `lambda(t) = v0(t)^2`
    #[default]
    NoiseVariance,
}

impl LossWeighting {
    fn lambda(self, v0_sq: f64) -> f64 {
        match self {
            LossWeighting::Uniform => 1.0,
            LossWeighting::NoiseVariance => v0_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weighting: LossWeighting,
    /// Probability of drawing `t` from the whole horizon.
    pub p_force: f64,
    pub v_floor: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            weighting: LossWeighting::NoiseVariance,
            p_force: 0.0,
            v_floor: 1e-5,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_force) {
            return invalid("p_force must lie in [0, 1]");
        }
        if !(self.v_floor > 0.0) {
            return invalid("v_floor must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return invalid("gradient clip must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub losses: Vec<f64>,
    /// Mean sampled `t` over the non-skipped rows of each step.
    pub times: Vec<f64>,
    pub skipped_fraction: f64,
}

impl TrainingTrace {
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.losses.len() < window {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.losses.len() - window + 1);
        let mut acc: f64 = self.losses[..window].iter().sum();
        out.push(acc / window as f64);
        for i in window..self.losses.len() {
            acc += self.losses[i] - self.losses[i - window];
            out.push(acc / window as f64);
        }
        out
    }
}

/// How the risk vector enters the network, if at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conditioning {
    None,
    /// Input `[r | 0]`, replaced by `[0 | 1]` with probability `mask_prob`.
    MaskedRisk { mask_prob: f64 },
}

impl Conditioning {
    pub fn width(&self, dim: usize) -> usize {
        match self {
            Conditioning::None => 0,
            Conditioning::MaskedRisk { .. } => dim + 1,
        }
    }
}

const GUARD: f64 = 1e-4;

/// Training time draw; `None` means the sample is skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TimeDraw {
    pub t: Option<f64>,
    pub forced: bool,
}

/// Uniform on `[t_star + delta, T]`, or on `[delta, T]` with probability
/// `p_force`; `None` for an empty interval. Always consumes two uniforms.
pub fn sample_training_time<R: Rng + ?Sized>(interval: &StabilityInterval, p_force: f64, rng: &mut R) -> Option<f64> {
    draw_time(interval, p_force, rng).t
}

pub(crate) fn draw_time<R: Rng + ?Sized>(interval: &StabilityInterval, p_force: f64, rng: &mut R) -> TimeDraw {
    let coin: f64 = rng.gen();
    let u: f64 = rng.gen();
    let horizon = interval.upper;
    let delta = GUARD * horizon;
    let forced = coin < p_force;
    let lo = if forced {
        Some(delta)
    } else {
        interval.t_star.map(|s| s + delta)
    };
    let t = lo.filter(|&lo| lo <= horizon).map(|lo| lo + u * (horizon - lo));
    TimeDraw { t, forced }
}

/// Per-sample deduction `Psi(u) = u^power * base`.
#[derive(Debug, Clone)]
pub(crate) struct Deduction {
    base: Vec<f64>,
    power: i32,
    pub interval: StabilityInterval,
}

impl Deduction {
    pub fn new(spec: &SdeSpec, law: NoiseKind, r: &[f64]) -> Result<Self> {
        check_risk(r)?;
        match law {
            NoiseKind::Gaussian => Ok(Self {
                base: r.iter().map(|v| v * v).collect(),
                power: 2,
                interval: spec.stability_interval(r)?,
            }),
            NoiseKind::Cauchy => {
                let base = psi_cauchy(r)?;
                let m = base.iter().copied().fold(0.0, f64::max);
                let interval = spec.stability_interval_with(|t| Ok(spec.schedules_unchecked(t).0 * m))?;
                Ok(Self { base, power: 1, interval })
            }
        }
    }

    fn at(&self, u: f64, j: usize) -> f64 {
        u.powi(self.power) * self.base[j]
    }
}

/// Caches deductions by risk bit pattern; synthetic datasets reuse a
/// handful of risk vectors.
pub(crate) fn prepare_table(spec: &SdeSpec, law: NoiseKind, data: &[RiskSample]) -> Result<(Vec<usize>, Vec<Deduction>)> {
    let mut cache: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut table = Vec::new();
    let mut idx = Vec::with_capacity(data.len());
    for s in data {
        let key: Vec<u64> = s.r.iter().map(|v| v.to_bits()).collect();
        let k = match cache.get(&key) {
            Some(&k) => k,
            None => {
                table.push(Deduction::new(spec, law, &s.r)?);
                cache.insert(key, table.len() - 1);
                table.len() - 1
            }
        };
        idx.push(k);
    }
    Ok((idx, table))
}

/// One row of a loss batch.
struct Row<'a> {
    x0: &'a [f64],
    deduction: &'a Deduction,
    draw: TimeDraw,
    eta: Vec<f64>,
    cond: Option<Vec<f64>>,
}

fn batch_loss(net: &ScoreNetwork, rows: &[Row], weighting: LossWeighting, v_floor: f64) -> Result<(f64, Vec<Tensor>, f64)> {
    let n = rows.len();
    let d = net.dim();
    let horizon = net.spec.horizon;
    let mut x = vec![0.0; n * d];
    let mut targets = vec![0.0; n * d];
    let mut weights = vec![0.0; n];
    let mut times = vec![horizon; n];
    let cw = net.cond_dim();
    let mut cond = vec![0.0; n * cw];
    let mut t_sum = 0.0;
    let mut t_count = 0usize;
    for (i, row) in rows.iter().enumerate() {
        if let Some(c) = &row.cond {
            cond[i * cw..(i + 1) * cw].copy_from_slice(c);
        }
        let Some(t) = row.draw.t else { continue };
        let (u, v0_sq) = net.spec.schedules_unchecked(t);
        let (c_in, c_out) = net.scalings(t);
        t_sum += t;
        t_count += 1;
        times[i] = t;
        weights[i] = weighting.lambda(v0_sq) * c_out * c_out;
        for j in 0..d {
            let mut v = (v0_sq - row.deduction.at(u, j)).max(0.0).sqrt();
            if v < v_floor {
                if !row.draw.forced {
                    return Err(Error::PreconditionViolation(format!(
                        "v = {v:e} below the floor at t = {t} inside the stability interval"
                    )));
                }
                v = v_floor;
            }
            let xt = u * row.x0[j] + v * row.eta[j];
            x[i * d + j] = c_in * xt;
            targets[i * d + j] = -row.eta[j] / (v * c_out);
        }
    }
    let mut batch = crate::nn::ScoreBatch::new(Tensor::new(x, vec![n, d])?, times);
    if cw > 0 {
        batch = batch.with_cond(Tensor::new(cond, vec![n, cw])?);
    }
    let (loss, grads) = net
        .model
        .loss_and_grads(&batch, &Tensor::new(targets, vec![n, d])?, &weights)?;
    let mean_t = if t_count > 0 { t_sum / t_count as f64 } else { f64::NAN };
    Ok((loss, grads, mean_t))
}

fn draw_eta<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `||eta / v(r, t) + s(x(t), t)||^2` for one Gaussian-corrupted sample at a
/// given `t`, with gradients through the network only.
pub fn risk_free_loss<R: Rng + ?Sized>(
    net: &ScoreNetwork,
    x0: &[f64],
    r: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>)> {
    if x0.len() != net.dim() || r.len() != net.dim() {
        return invalid("sample and risk must match the network dimension");
    }
    if net.cond_dim() != 0 {
        return invalid("risk-free loss is defined for unconditional networks");
    }
    net.spec.base_schedules(t)?;
    let deduction = Deduction::new(&net.spec, NoiseKind::Gaussian, r)?;
    let row = Row {
        x0,
        deduction: &deduction,
        draw: TimeDraw { t: Some(t), forced: false },
        eta: draw_eta(x0.len(), rng),
        cond: None,
    };
    let (loss, grads, _) = batch_loss(net, &[row], LossWeighting::Uniform, 1e-300)?;
    Ok((loss, grads))
}

/// Trains a network on risk-annotated samples.
pub fn train(
    net: &mut ScoreNetwork,
    data: &[RiskSample],
    law: NoiseKind,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    train_conditioned(net, data, law, Conditioning::None, config)
}

pub fn train_conditioned(
    net: &mut ScoreNetwork,
    data: &[RiskSample],
    law: NoiseKind,
    conditioning: Conditioning,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    fit(net, data, law, conditioning, None, config)
}

/// Shared loop. `labels`, when given, replaces `data[i].r` as the
/// conditioning input while the forward process still uses `data[i].r`.
pub(crate) fn fit(
    net: &mut ScoreNetwork,
    data: &[RiskSample],
    law: NoiseKind,
    conditioning: Conditioning,
    labels: Option<&[Vec<f64>]>,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    config.validate()?;
    if labels.is_some_and(|l| l.len() != data.len()) {
        return invalid("one conditioning label per sample is required");
    }
    if data.is_empty() {
        return invalid("training set is empty");
    }
    let d = net.dim();
    if let Some(s) = data.iter().find(|s| s.x0.len() != d || s.r.len() != d) {
        return invalid(format!(
            "sample of dimension {} for a {d}-d network",
            s.x0.len()
        ));
    }
    if let Some(l) = labels.and_then(|l| l.iter().find(|r| r.len() != d)) {
        return invalid(format!("label of dimension {} for a {d}-d network", l.len()));
    }
    if conditioning.width(d) != net.cond_dim() {
        return invalid("network conditioning width does not match the conditioning scheme");
    }
    if let Conditioning::MaskedRisk { mask_prob } = conditioning {
        if !(mask_prob > 0.0 && mask_prob < 1.0) {
            return invalid("mask probability must lie in (0, 1)");
        }
    }
    let (index, table) = prepare_table(&net.spec, law, data)?;
    if config.p_force == 0.0 && table.iter().all(|t| t.interval.is_empty()) {
        return Err(Error::Configuration(
            "every sample has an empty stability interval".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(&net.model, config.learning_rate);
    let mut trace = TrainingTrace::default();
    let mut skipped = 0usize;
    for _ in 0..config.steps {
        let mut rows = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let i = rng.gen_range(0..data.len());
            let deduction = &table[index[i]];
            let draw = draw_time(&deduction.interval, config.p_force, &mut rng);
            if draw.t.is_none() {
                skipped += 1;
            }
            let cond = match conditioning {
                Conditioning::None => None,
                Conditioning::MaskedRisk { mask_prob } => {
                    let r = labels.map_or(data[i].r.as_slice(), |l| l[i].as_slice());
                    Some(risk_condition(r, rng.gen::<f64>() < mask_prob))
                }
            };
            rows.push(Row {
                x0: &data[i].x0,
                deduction,
                draw,
                eta: draw_eta(d, &mut rng),
                cond,
            });
        }
        let (loss, mut grads, mean_t) = batch_loss(net, &rows, config.weighting, config.v_floor)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite loss at step {}",
                trace.losses.len()
            )));
        }
        if let Some(c) = config.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        adam_step(&mut net.model, &grads, &mut opt)?;
        trace.losses.push(loss);
        trace.times.push(mean_t);
    }
    let total = config.steps * config.batch_size;
    trace.skipped_fraction = if total > 0 { skipped as f64 / total as f64 } else { 0.0 };
    Ok(trace)
}

/// Conditioning input `[r | 0]`, or `[0 | 1]` when masked.
pub fn risk_condition(r: &[f64], masked: bool) -> Vec<f64> {
    let mut c = vec![0.0; r.len() + 1];
    if masked {
        c[r.len()] = 1.0;
    } else {
        c[..r.len()].copy_from_slice(r);
    }
    c
}
