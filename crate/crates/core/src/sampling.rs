//! Reverse-time Euler-Maruyama generation at zero risk.
//!
//! From `x(T)` drawn from the prior, each step applies
//! `x <- x - (f x - g^2 s(x, t)) dt + g sqrt(dt) z` with the clean-process
//! coefficients `f(t)`, `g(0, t)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::MixtureSpec;
use crate::error::{invalid, Error, Result};
use crate::score::ScoreNetwork;
use crate::sde::{ReverseCoefficients, SdeSpec};
use crate::tensor::Tensor;

/// Anything that can score a batch of states at a common time.
pub trait ScoreFn: Sync {
    fn dim(&self) -> usize;
    fn score_batch(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

impl ScoreFn for ScoreNetwork {
    fn dim(&self) -> usize {
        ScoreNetwork::dim(self)
    }

    fn score_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        if self.cond_dim() != 0 {
            return invalid("conditional network needs a guidance rule to sample");
        }
        ScoreNetwork::score_batch(self, x, &vec![t; x.rows()], None)
    }
}

/// Exact score of `N(mean, diag(var))` data pushed through a base diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub spec: SdeSpec,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ScoreFn for GaussianScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let (u, v0_sq) = self.spec.base_schedules(t)?;
        let d = self.dim();
        if x.cols() != d {
            return invalid("state dimension mismatch");
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = -(row[j] - u * self.mean[j]) / (u * u * self.var[j] + v0_sq);
            }
        }
        Ok(out)
    }
}

/// Exact score of a diagonal-covariance Gaussian mixture pushed through a
/// base diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureScore {
    pub spec: SdeSpec,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-component diagonal variances.
    pub vars: Vec<Vec<f64>>,
}

impl GaussianMixtureScore {
    /// Oracle for a mixture with diagonal covariances.
    pub fn from_mixture(spec: SdeSpec, mix: &MixtureSpec) -> Result<Self> {
        mix.validate()?;
        let d = mix.dim();
        let mut vars = Vec::with_capacity(mix.components());
        for cov in &mix.covariances {
            if (0..d).any(|a| (0..d).any(|b| a != b && cov[a * d + b] != 0.0)) {
                return invalid("mixture oracle needs diagonal covariances");
            }
            vars.push((0..d).map(|j| cov[j * d + j]).collect());
        }
        Ok(Self {
            spec,
            weights: mix.weights.clone(),
            means: mix.means.clone(),
            vars,
        })
    }
}

impl ScoreFn for GaussianMixtureScore {
    fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn score_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let (u, v0_sq) = self.spec.base_schedules(t)?;
        let d = self.dim();
        if x.cols() != d {
            return invalid("state dimension mismatch");
        }
        let k = self.weights.len();
        let mut out = x.clone();
        let mut logp = vec![0.0; k];
        let mut grads = vec![0.0; k * d];
        for row in out.data_mut().chunks_exact_mut(d) {
            for c in 0..k {
                let mut lp = self.weights[c].ln();
                for j in 0..d {
                    let s2 = u * u * self.vars[c][j] + v0_sq;
                    let e = row[j] - u * self.means[c][j];
                    lp -= 0.5 * (e * e / s2 + s2.ln());
                    grads[c * d + j] = -e / s2;
                }
                logp[c] = lp;
            }
            let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logp.iter().map(|l| (l - m).exp()).sum();
            for j in 0..d {
                row[j] = (0..k).map(|c| (logp[c] - m).exp() / z * grads[c * d + j]).sum();
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeGrid {
    Uniform,
    /// Increasing times from `0` to `T`.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Number of time points `M`.
    pub steps: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    /// Worker threads; `0` reads `RSDE_THREADS` and falls back to one.
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            grid: TimeGrid::Uniform,
            seed: 0,
            threads: 0,
        }
    }
}

pub const THREADS_ENV: &str = "RSDE_THREADS";

pub fn thread_count(requested: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

impl SamplerConfig {
    /// Increasing time points `t_1 = 0 < ... < t_M = T`. A single point
    /// degenerates to the one-step grid `{0, T}`.
    pub fn time_points(&self, horizon: f64) -> Result<Vec<f64>> {
        let pts = match &self.grid {
            TimeGrid::Uniform => {
                if self.steps == 0 {
                    return invalid("at least one time point is required");
                }
                let m = self.steps.max(2);
                (0..m)
                    .map(|i| if i + 1 == m { horizon } else { horizon * i as f64 / (m - 1) as f64 })
                    .collect::<Vec<_>>()
            }
            TimeGrid::Custom(p) => p.clone(),
        };
        if pts.len() < 2 || pts[0] != 0.0 || (pts[pts.len() - 1] - horizon).abs() > 1e-12 * horizon {
            return invalid("time grid must run from 0 to T");
        }
        if pts.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("time grid must be strictly increasing");
        }
        Ok(pts)
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs `n` independent chains; chain `c` draws from its own stream, so the
/// output does not depend on the thread count.
pub fn reverse_sample(
    score: &dyn ScoreFn,
    coeffs: &(dyn ReverseCoefficients + Sync),
    config: &SamplerConfig,
    n: usize,
) -> Result<Tensor> {
    let d = score.dim();
    let times = config.time_points(coeffs.horizon())?;
    let threads = thread_count(config.threads).min(n.max(1));
    let per = n.div_ceil(threads.max(1)).max(1);
    let chunks: Vec<(usize, usize)> = (0..n).step_by(per).map(|s| (s, (s + per).min(n))).collect();
    let results: Vec<Result<Vec<f64>>> = if chunks.len() <= 1 {
        chunks
            .iter()
            .map(|&(a, b)| run_chains(score, coeffs, &times, config.seed, a, b))
            .collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|&(a, b)| {
                    let times = &times;
                    s.spawn(move || run_chains(score, coeffs, times, config.seed, a, b))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("sampler thread panicked".into()))))
                .collect()
        })
    };
    let mut data = Vec::with_capacity(n * d);
    for r in results {
        data.extend(r?);
    }
    Tensor::new(data, vec![n, d])
}

fn run_chains(
    score: &dyn ScoreFn,
    coeffs: &(dyn ReverseCoefficients + Sync),
    times: &[f64],
    seed: u64,
    first: usize,
    end: usize,
) -> Result<Vec<f64>> {
    let d = score.dim();
    let n = end - first;
    let mut rngs: Vec<ChaCha8Rng> = (first..end).map(|c| chain_rng(seed, c)).collect();
    let prior = coeffs.prior_std();
    let mut x = Vec::with_capacity(n * d);
    for rng in rngs.iter_mut() {
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            x.push(prior * z);
        }
    }
    let mut x = Tensor::new(x, vec![n, d])?;
    let zero = vec![0.0; d];
    for i in (1..times.len()).rev() {
        let t = times[i];
        let dt = t - times[i - 1];
        let f = coeffs.drift(t)?;
        let g = coeffs.diffusion(&zero, t)?;
        if g.len() != d {
            return Err(Error::Internal("diffusion width differs from the state".into()));
        }
        let s = score.score_batch(&x, t)?;
        let sq = dt.sqrt();
        for (c, (row, srow)) in x.data_mut().chunks_exact_mut(d).zip(s.data().chunks_exact(d)).enumerate() {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rngs[c]);
                let drift = f * row[j] - g[j] * g[j] * srow[j];
                row[j] += -drift * dt + g[j] * sq * z;
            }
        }
        if !x.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite state at step {} (t = {t})",
                times.len() - i
            )));
        }
    }
    Ok(x.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn moments(x: &Tensor, j: usize) -> (f64, f64) {
        let n = x.rows() as f64;
        let m = (0..x.rows()).map(|i| x.row(i)[j]).sum::<f64>() / n;
        let v = (0..x.rows()).map(|i| (x.row(i)[j] - m).powi(2)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    #[test]
    fn uniform_grid_layout() {
        let c = SamplerConfig { steps: 5, ..Default::default() };
        assert_eq!(c.time_points(1.0).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let c = SamplerConfig { steps: 1, ..Default::default() };
        assert_eq!(c.time_points(2.0).unwrap(), vec![0.0, 2.0]);
        let c = SamplerConfig { grid: TimeGrid::Custom(vec![0.0, 0.6, 0.5, 1.0]), ..Default::default() };
        assert!(c.time_points(1.0).is_err());
    }

    #[test]
    fn analytic_score_recovers_gaussian() {
        let spec = SdeSpec::vp(1);
        let score = GaussianScore { spec: spec.clone(), mean: vec![1.5], var: vec![0.25] };
        let cfg = SamplerConfig { steps: 1000, seed: 3, ..Default::default() };
        let x = reverse_sample(&score, &spec, &cfg, 20_000).unwrap();
        let (m, s) = moments(&x, 0);
        assert!((m - 1.5).abs() < 0.02 * 1.5, "mean {m}");
        assert!((s - 0.5).abs() < 0.02 * 0.5, "std {s}");
    }

    #[test]
    fn degenerate_grid_is_finite() {
        let spec = SdeSpec::vp(2);
        let score = GaussianScore { spec: spec.clone(), mean: vec![0.0, 1.0], var: vec![1.0, 1.0] };
        let cfg = SamplerConfig { steps: 1, ..Default::default() };
        let x = reverse_sample(&score, &spec, &cfg, 10).unwrap();
        assert!(x.is_finite());
    }

    #[test]
    fn output_does_not_depend_on_threads() {
        let spec = SdeSpec::ve(2);
        let score = GaussianScore { spec: spec.clone(), mean: vec![0.0, 1.0], var: vec![1.0, 2.0] };
        let a = reverse_sample(&score, &spec, &SamplerConfig { steps: 50, threads: 1, ..Default::default() }, 37).unwrap();
        let b = reverse_sample(&score, &spec, &SamplerConfig { steps: 50, threads: 4, ..Default::default() }, 37).unwrap();
        assert_eq!(a, b);
    }

    struct Watch<'a> {
        inner: &'a SdeSpec,
        nonzero: AtomicUsize,
        calls: AtomicUsize,
    }

    impl ReverseCoefficients for Watch<'_> {
        fn horizon(&self) -> f64 {
            self.inner.horizon
        }
        fn drift(&self, t: f64) -> Result<f64> {
            self.inner.drift(t)
        }
        fn diffusion(&self, r: &[f64], t: f64) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            if r.iter().any(|&v| v != 0.0) {
                self.nonzero.fetch_add(1, Ordering::Relaxed);
            }
            self.inner.diffusion(r, t)
        }
        fn prior_std(&self) -> f64 {
            self.inner.prior_std()
        }
    }

    #[test]
    fn sampler_only_uses_zero_risk() {
        let spec = SdeSpec::vp(2);
        let w = Watch { inner: &spec, nonzero: AtomicUsize::new(0), calls: AtomicUsize::new(0) };
        let score = GaussianScore { spec: spec.clone(), mean: vec![0.0; 2], var: vec![1.0; 2] };
        reverse_sample(&score, &w, &SamplerConfig { steps: 100, ..Default::default() }, 8).unwrap();
        assert_eq!(w.calls.load(Ordering::Relaxed), 99);
        assert_eq!(w.nonzero.load(Ordering::Relaxed), 0);
    }

    struct Exploding;
    impl ScoreFn for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn score_batch(&self, x: &Tensor, _t: f64) -> Result<Tensor> {
            Ok(x.map(|_| f64::INFINITY))
        }
    }

    #[test]
    fn non_finite_state_is_reported() {
        let spec = SdeSpec::vp(1);
        let r = reverse_sample(&Exploding, &spec, &SamplerConfig { steps: 10, ..Default::default() }, 2);
        assert!(matches!(r, Err(Error::NumericalFailure(m)) if m.contains("step 1")));
    }
}
