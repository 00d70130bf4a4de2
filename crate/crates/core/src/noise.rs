//! Corruption laws and the variance deduction `Psi` they induce.
//!
//! For a zero-mean corruption with characteristic function `chi_r`, the
//! least-instability kernel variance is `v^2 = max(v0^2 - Psi(u, r), 0)`
//! where `Psi` is the `Omega`-weighted least-squares fit of
//! `-2 ln|chi_r(u * y)|` by `sum_j Psi_j y_j^2`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sde::{check_risk, coefficients_from_deduction, RiskCoefficients, SdeSpec, StabilityInterval};

pub type CharFn = Arc<dyn Fn(&[f64]) -> Complex<f64> + Send + Sync>;
pub type NoiseSampler = Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Cauchy,
}

/// A user-supplied corruption: characteristic function with `r` already
/// bound, plus a matching sampler.
#[derive(Clone)]
pub struct CustomNoise {
    pub charfn: CharFn,
    pub sampler: NoiseSampler,
    pub weight: WeightFunction,
}

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomNoise").field("weight", &self.weight).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum NoiseLaw {
    Gaussian,
    Cauchy,
    Custom(CustomNoise),
}

/// A corruption law with its per-entry risk (std devs or Cauchy scales).
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub law: NoiseLaw,
    pub risk: Vec<f64>,
}

impl NoiseModel {
    pub fn gaussian(risk: Vec<f64>) -> Result<Self> {
        check_risk(&risk)?;
        Ok(Self {
            law: NoiseLaw::Gaussian,
            risk,
        })
    }

    pub fn cauchy(risk: Vec<f64>) -> Result<Self> {
        check_risk(&risk)?;
        Ok(Self {
            law: NoiseLaw::Cauchy,
            risk,
        })
    }

    pub fn of_kind(kind: NoiseKind, risk: Vec<f64>) -> Result<Self> {
        match kind {
            NoiseKind::Gaussian => Self::gaussian(risk),
            NoiseKind::Cauchy => Self::cauchy(risk),
        }
    }

    /// `risk` only fixes the dimension and the zero pattern here.
    pub fn custom(custom: CustomNoise, risk: Vec<f64>) -> Result<Self> {
        check_risk(&risk)?;
        Ok(Self {
            law: NoiseLaw::Custom(custom),
            risk,
        })
    }

    pub fn dim(&self) -> usize {
        self.risk.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.law {
            NoiseLaw::Gaussian => self
                .risk
                .iter()
                .map(|&r| {
                    let z: f64 = rng.sample(StandardNormal);
                    r * z
                })
                .collect(),
            NoiseLaw::Cauchy => self
                .risk
                .iter()
                .map(|&r| {
                    let u: f64 = rng.gen();
                    if r == 0.0 {
                        0.0
                    } else {
                        r * (std::f64::consts::PI * (u - 0.5)).tan()
                    }
                })
                .collect(),
            NoiseLaw::Custom(c) => {
                let mut adapter = RngAdapter(rng);
                (c.sampler)(&mut adapter)
            }
        }
    }

    pub fn charfn(&self, y: &[f64]) -> Complex<f64> {
        match &self.law {
            NoiseLaw::Gaussian => {
                let q: f64 = self.risk.iter().zip(y).map(|(r, y)| r * r * y * y).sum();
                Complex::new((-0.5 * q).exp(), 0.0)
            }
            NoiseLaw::Cauchy => {
                let q: f64 = self.risk.iter().zip(y).map(|(r, y)| r * y.abs()).sum();
                Complex::new((-q).exp(), 0.0)
            }
            NoiseLaw::Custom(c) => (c.charfn)(y),
        }
    }
}

struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// `r^2 u^2` entrywise.
pub fn psi_gaussian(r: &[f64], u: f64) -> Result<Vec<f64>> {
    check_risk(r)?;
    Ok(r.iter().map(|ri| ri * ri * u * u).collect())
}

/// Cauchy deduction at `u = 1`, fitted with weight `exp(-sum_j r_j |y_j|)`.
///
/// Solves `A psi = c` over the coordinates with `r_j > 0`, where
/// `A_ij = (1 + 5 [i = j]) / (r_i^2 r_j^2)` and `c_i = (D + 2) / r_i^2`,
/// `D` counting the corrupted coordinates. Zero-risk entries get 0.
pub fn psi_cauchy(r: &[f64]) -> Result<Vec<f64>> {
    check_risk(r)?;
    let active: Vec<usize> = (0..r.len()).filter(|&j| r[j] > 0.0).collect();
    let mut out = vec![0.0; r.len()];
    let d = active.len();
    if d == 0 {
        return Ok(out);
    }
    let inv2: Vec<f64> = active.iter().map(|&j| 1.0 / (r[j] * r[j])).collect();
    let a = DMatrix::from_fn(d, d, |i, j| {
        let diag = if i == j { 6.0 } else { 1.0 };
        diag * inv2[i] * inv2[j]
    });
    let c = DVector::from_fn(d, |i, _| (d as f64 + 2.0) * inv2[i]);
    let sol = a
        .cholesky()
        .ok_or_else(|| Error::Internal("Cauchy moment system is not positive definite".into()))?
        .solve(&c);
    for (k, &j) in active.iter().enumerate() {
        out[j] = sol[k].max(0.0);
    }
    Ok(out)
}

/// Weight `Omega(y)` used to fit `Psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightFunction {
    /// `exp(-0.5 s^2 |y|^2)`
    Gaussian { scale: f64 },
    /// `exp(-sum_j k_j |y_j|)`
    Laplace { scales: Vec<f64> },
}

impl Default for WeightFunction {
    fn default() -> Self {
        WeightFunction::Gaussian { scale: 1.0 }
    }
}

impl WeightFunction {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            WeightFunction::Gaussian { scale } if *scale > 0.0 && scale.is_finite() => Ok(()),
            WeightFunction::Laplace { scales }
                if scales.len() == dim && scales.iter().all(|&k| k > 0.0 && k.is_finite()) =>
            {
                Ok(())
            }
            _ => invalid(format!("weight function {self:?} is not integrable in dimension {dim}")),
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            WeightFunction::Gaussian { scale } => {
                let q: f64 = y.iter().map(|v| v * v).sum();
                (-0.5 * scale * scale * q).exp()
            }
            WeightFunction::Laplace { scales } => {
                let q: f64 = scales.iter().zip(y).map(|(k, v)| k * v.abs()).sum();
                (-q).exp()
            }
        }
    }

    /// Half-width where the one-dimensional factor drops below `floor`.
    fn half_width(&self, j: usize, floor: f64) -> f64 {
        let l = -floor.ln();
        match self {
            WeightFunction::Gaussian { scale } => (2.0 * l).sqrt() / scale,
            WeightFunction::Laplace { scales } => l / scales[j],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Gauss-Legendre nodes on each half of `[-L, L]`.
    pub nodes_per_half: usize,
    /// Per-dimension weight at the box edge.
    pub edge_weight: f64,
    /// Nodes with `Omega` below this are dropped.
    pub skip_below: f64,
    /// Tensor grids are used up to this dimension, Monte Carlo above.
    pub max_tensor_dim: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            nodes_per_half: 64,
            edge_weight: 1e-14,
            skip_below: 1e-14,
            max_tensor_dim: 3,
            mc_samples: 1_000_000,
            seed: 0x5eed,
        }
    }
}

/// Integration nodes with `Omega` folded into the weights.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn build(omega: &WeightFunction, dim: usize, opts: &QuadratureOptions) -> Result<Self> {
        if dim == 0 {
            return invalid("quadrature needs a positive dimension");
        }
        omega.validate(dim)?;
        if dim <= opts.max_tensor_dim {
            Self::tensor(omega, dim, opts)
        } else {
            Self::monte_carlo(omega, dim, opts)
        }
    }

    fn tensor(omega: &WeightFunction, dim: usize, opts: &QuadratureOptions) -> Result<Self> {
        if opts.nodes_per_half < 2 {
            return invalid("at least two nodes per half-interval are needed");
        }
        let rule = gauss_quad::GaussLegendre::new(opts.nodes_per_half)
            .map_err(|e| Error::Internal(format!("Gauss-Legendre rule: {e}")))?;
        let base: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
        // |y| has a kink at 0, so each axis is split into two panels there
        let axes: Vec<Vec<(f64, f64)>> = (0..dim)
            .map(|j| {
                let l = omega.half_width(j, opts.edge_weight);
                let half = 0.5 * l;
                let mut axis = Vec::with_capacity(2 * base.len());
                for &(x, w) in &base {
                    axis.push((-half + half * x, half * w));
                    axis.push((half + half * x, half * w));
                }
                axis
            })
            .collect();

        let total: usize = axes.iter().map(Vec::len).product();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        let mut y = vec![0.0; dim];
        for _ in 0..total {
            let mut w = 1.0;
            for j in 0..dim {
                let (node, wj) = axes[j][idx[j]];
                y[j] = node;
                w *= wj;
            }
            let om = omega.eval(&y);
            if om >= opts.skip_below {
                nodes.extend_from_slice(&y);
                weights.push(w * om);
            }
            for j in (0..dim).rev() {
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(Self { dim, nodes, weights })
    }

    /// Draws from the normalised `Omega`, so every sample carries equal weight.
    fn monte_carlo(omega: &WeightFunction, dim: usize, opts: &QuadratureOptions) -> Result<Self> {
        if opts.mc_samples == 0 {
            return invalid("Monte Carlo quadrature needs samples");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let n = opts.mc_samples;
        let mut nodes = Vec::with_capacity(n * dim);
        match omega {
            WeightFunction::Gaussian { scale } => {
                for _ in 0..n * dim {
                    let z: f64 = rng.sample(StandardNormal);
                    nodes.push(z / scale);
                }
            }
            WeightFunction::Laplace { scales } => {
                for _ in 0..n {
                    for &k in scales {
                        let e = Exp::new(k).map_err(|e| Error::Internal(e.to_string()))?;
                        let mag: f64 = e.sample(&mut rng);
                        nodes.push(if rng.gen::<bool>() { mag } else { -mag });
                    }
                }
            }
        }
        Ok(Self {
            dim,
            nodes,
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

const LN_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)
const MAX_CONDITION: f64 = 1e12;

/// `M^{-1} b` with `M_ij = int Omega y_i^2 y_j^2` and
/// `b_i = -2 int Omega ln|chi(u * y)| y_i^2`.
pub fn psi_numeric(
    charfn: &dyn Fn(&[f64]) -> Complex<f64>,
    u: f64,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    let d = grid.dim();
    if grid.is_empty() {
        return Err(Error::NumericalFailure("quadrature grid has no nodes".into()));
    }
    let mut m = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut scaled = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..grid.len() {
        let y = grid.node(i);
        let w = grid.weight(i);
        for j in 0..d {
            scaled[j] = u * y[j];
            sq[j] = y[j] * y[j];
        }
        let lnmod = charfn(&scaled).norm().ln().max(LN_FLOOR);
        for a in 0..d {
            b[a] -= 2.0 * w * lnmod * sq[a];
            for c in a..d {
                m[(a, c)] += w * sq[a] * sq[c];
            }
        }
    }
    for a in 0..d {
        for c in 0..a {
            m[(a, c)] = m[(c, a)];
        }
    }
    let eig = m.clone().symmetric_eigen();
    let hi = eig.eigenvalues.max();
    let lo = eig.eigenvalues.min();
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::NumericalFailure(format!(
            "moment matrix is ill-conditioned (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    let sol = m
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("moment matrix is not positive definite".into()))?
        .solve(&b);
    Ok(sol.iter().copied().collect())
}

/// Evaluates the deduction `Psi(u)` for a noise model; Cauchy uses
/// `Psi = u * psi`.
pub struct Deduction<'a> {
    noise: &'a NoiseModel,
    cauchy: Option<Vec<f64>>,
    grid: Option<QuadratureGrid>,
}

impl<'a> Deduction<'a> {
    pub fn new(noise: &'a NoiseModel) -> Result<Self> {
        Self::with_options(noise, &QuadratureOptions::default())
    }

    pub fn with_options(noise: &'a NoiseModel, opts: &QuadratureOptions) -> Result<Self> {
        check_risk(&noise.risk)?;
        let (cauchy, grid) = match &noise.law {
            NoiseLaw::Gaussian => (None, None),
            NoiseLaw::Cauchy => (Some(psi_cauchy(&noise.risk)?), None),
            NoiseLaw::Custom(c) => (None, Some(QuadratureGrid::build(&c.weight, noise.dim(), opts)?)),
        };
        Ok(Self { noise, cauchy, grid })
    }

    pub fn at(&self, u: f64) -> Result<Vec<f64>> {
        match &self.noise.law {
            NoiseLaw::Gaussian => psi_gaussian(&self.noise.risk, u),
            NoiseLaw::Cauchy => Ok(self.cauchy.as_ref().map_or_else(Vec::new, |p| {
                p.iter().map(|v| u * v).collect()
            })),
            NoiseLaw::Custom(c) => {
                let grid = self.grid.as_ref().expect("grid built for custom noise");
                let mut psi = psi_numeric(c.charfn.as_ref(), u, grid)?;
                for (p, &r) in psi.iter_mut().zip(&self.noise.risk) {
                    if r == 0.0 {
                        *p = 0.0;
                    }
                }
                Ok(psi)
            }
        }
    }

    pub fn coefficients(&self, spec: &SdeSpec, t: f64) -> Result<RiskCoefficients> {
        let (u, v0_sq) = spec.base_schedules(t)?;
        Ok(coefficients_from_deduction(u, v0_sq, &self.at(u)?))
    }

    pub fn stability_interval(&self, spec: &SdeSpec) -> Result<StabilityInterval> {
        if matches!(self.noise.law, NoiseLaw::Gaussian) {
            return spec.stability_interval(&self.noise.risk);
        }
        spec.stability_interval_with(|t| {
            let (u, _) = spec.schedules_unchecked(t);
            Ok(self.at(u)?.into_iter().fold(0.0, f64::max))
        })
    }

    /// `g^2 = g0^2 - dPsi/dt + 2 f Psi` on stable entries, 0 elsewhere.
    pub fn diffusion(&self, spec: &SdeSpec, t: f64) -> Result<Vec<f64>> {
        let (u, v0_sq) = spec.base_schedules(t)?;
        let f = spec.drift(t)?;
        let g0_sq = spec.base_diffusion(t)?.powi(2);
        let psi = self.at(u)?;
        let dpsi_du: Vec<f64> = match &self.noise.law {
            NoiseLaw::Gaussian => self.noise.risk.iter().map(|r| 2.0 * r * r * u).collect(),
            NoiseLaw::Cauchy => self.cauchy.clone().unwrap_or_default(),
            NoiseLaw::Custom(_) => {
                let h = 1e-4 * u.max(1e-3);
                let hi = self.at(u + h)?;
                let lo = self.at((u - h).max(0.0))?;
                let span = u + h - (u - h).max(0.0);
                hi.iter().zip(&lo).map(|(a, b)| (a - b) / span).collect()
            }
        };
        Ok(psi
            .iter()
            .zip(&dpsi_du)
            .map(|(&p, &dp)| {
                if v0_sq >= p {
                    let dpsi_dt = dp * f * u;
                    (g0_sq - dpsi_dt + 2.0 * f * p).max(0.0).sqrt()
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// One-shot form of [`Deduction::coefficients`].
pub fn general_risk_coefficients(spec: &SdeSpec, noise: &NoiseModel, t: f64) -> Result<RiskCoefficients> {
    Deduction::new(noise)?.coefficients(spec, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_risk_draws_zero() {
        let mut g = rng(0);
        for law in [NoiseModel::gaussian(vec![0.0; 3]), NoiseModel::cauchy(vec![0.0; 3])] {
            let m = law.unwrap();
            for _ in 0..100 {
                assert_eq!(m.sample(&mut g), vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn gaussian_sample_std() {
        let m = NoiseModel::gaussian(vec![2.0]).unwrap();
        let mut g = rng(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| m.sample(&mut g)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var.sqrt() - 2.0).abs() < 0.04, "std {}", var.sqrt());
    }

    #[test]
    fn cauchy_quartiles() {
        let m = NoiseModel::cauchy(vec![1.0]).unwrap();
        let mut g = rng(2);
        let mut xs: Vec<f64> = (0..100_000).map(|_| m.sample(&mut g)[0]).collect();
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[(p * (xs.len() - 1) as f64) as usize];
        assert!(q(0.5).abs() < 0.02);
        assert!((q(0.75) - q(0.25) - 2.0).abs() < 0.05);
    }

    #[test]
    fn psi_gaussian_values() {
        assert_eq!(psi_gaussian(&[0.0, 0.0], 0.3).unwrap(), vec![0.0, 0.0]);
        let p = psi_gaussian(&[1.0, 1.0], 0.7052).unwrap();
        for v in p {
            assert!((v - 0.4973).abs() < 1e-4);
        }
        assert!(psi_gaussian(&[-1.0], 1.0).is_err());
    }

    #[test]
    fn psi_cauchy_closed_form_values() {
        let p = psi_cauchy(&[2.0]).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-12);
        let p = psi_cauchy(&[1.0, 1.0]).unwrap();
        for v in p {
            assert!((v - 4.0 / 7.0).abs() < 1e-12);
        }
        let p = psi_cauchy(&[0.7, 0.0, 0.7, 0.7]).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p[0] - p[2]).abs() < 1e-12 && (p[2] - p[3]).abs() < 1e-12);
        // the zero coordinate drops out: same as the 3-d system
        let q = psi_cauchy(&[0.7, 0.7, 0.7]).unwrap();
        assert!((p[0] - q[0]).abs() < 1e-12);
    }

    #[test]
    fn psi_cauchy_unequal_scales() {
        // hand solution of [[6/1, 1/4], [1/4, 6/16]] psi = (4, 1)
        let p = psi_cauchy(&[1.0, 2.0]).unwrap();
        assert!((p[0] - 4.0 / 7.0).abs() < 1e-12, "{p:?}");
        assert!((p[1] - 16.0 / 7.0).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn numeric_gaussian_matches_closed_form() {
        let grid = QuadratureGrid::build(&WeightFunction::Gaussian { scale: 1.0 }, 1, &Default::default())
            .unwrap();
        let m = NoiseModel::gaussian(vec![1.0]).unwrap();
        let p = psi_numeric(&|y| m.charfn(y), 1.0, &grid).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn numeric_cauchy_matches_closed_form() {
        let m = NoiseModel::cauchy(vec![2.0]).unwrap();
        let omega = WeightFunction::Laplace { scales: vec![2.0] };
        let grid = QuadratureGrid::build(&omega, 1, &Default::default()).unwrap();
        let p = psi_numeric(&|y| m.charfn(y), 1.0, &grid).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-2, "{p:?}");

        let m = NoiseModel::cauchy(vec![1.0, 1.0]).unwrap();
        let omega = WeightFunction::Laplace { scales: vec![1.0, 1.0] };
        let grid = QuadratureGrid::build(&omega, 2, &Default::default()).unwrap();
        let p = psi_numeric(&|y| m.charfn(y), 1.0, &grid).unwrap();
        for v in p {
            assert!((v - 4.0 / 7.0).abs() < 1e-2);
        }
    }

    #[test]
    fn monte_carlo_grid_recovers_gaussian() {
        let opts = QuadratureOptions {
            max_tensor_dim: 0,
            mc_samples: 200_000,
            ..Default::default()
        };
        let grid = QuadratureGrid::build(&WeightFunction::Gaussian { scale: 1.0 }, 4, &opts).unwrap();
        let r = [0.5, 1.0, 1.5, 0.2];
        let m = NoiseModel::gaussian(r.to_vec()).unwrap();
        let p = psi_numeric(&|y| m.charfn(y), 0.8, &grid).unwrap();
        for (pj, rj) in p.iter().zip(r) {
            // the Gaussian log-modulus is exactly quadratic, so any weight fits it
            assert!((pj - rj * rj * 0.64).abs() < 1e-8, "{p:?}");
        }
    }

    #[test]
    fn degenerate_weight_is_rejected() {
        let omega = WeightFunction::Laplace { scales: vec![1.0, 0.0] };
        assert!(QuadratureGrid::build(&omega, 2, &Default::default()).is_err());
    }

    #[test]
    fn ill_conditioned_moments_fail() {
        // a grid concentrated on one axis cannot identify the second entry
        let grid = QuadratureGrid {
            dim: 2,
            nodes: vec![1.0, 0.0, 2.0, 0.0],
            weights: vec![1.0, 1.0],
        };
        let r = psi_numeric(&|_| Complex::new(0.5, 0.0), 1.0, &grid);
        assert!(matches!(r, Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn gaussian_path_matches_closed_form_coefficients() {
        let spec = SdeSpec::vp(2);
        let mut g = rng(3);
        for _ in 0..100 {
            let r = vec![g.gen_range(0.0..3.0), g.gen_range(0.0..3.0)];
            let t = g.gen_range(0.0..1.0);
            let m = NoiseModel::gaussian(r.clone()).unwrap();
            let a = general_risk_coefficients(&spec, &m, t).unwrap();
            let b = spec.risk_coefficients(&r, t).unwrap();
            assert_eq!(a, b);
            let d = Deduction::new(&m).unwrap();
            let ga = d.diffusion(&spec, t).unwrap();
            let gb = spec.diffusion(&r, t).unwrap();
            for (x, y) in ga.iter().zip(&gb) {
                assert!((x - y).abs() < 1e-12 * y.max(1.0));
            }
        }
    }

    #[test]
    fn ve_cauchy_threshold() {
        let spec = SdeSpec::ve(1);
        // sigma(t)^2 = sigma(0)^2 + 1
        let t = spec.stability_interval(&[1.0]).unwrap().t_star.unwrap();
        let m = NoiseModel::cauchy(vec![2.0]).unwrap();
        let d = Deduction::new(&m).unwrap();
        let c = d.coefficients(&spec, t).unwrap();
        assert_eq!(c.stable, vec![false]);
        assert_eq!(d.diffusion(&spec, t).unwrap(), vec![0.0]);
        // stable once sigma^2 exceeds sigma(0)^2 + psi = sigma(0)^2 + 2
        let iv = d.stability_interval(&spec).unwrap();
        let expect = spec.stability_interval(&[2.0_f64.sqrt()]).unwrap().t_star.unwrap();
        assert!((iv.t_star.unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn zero_risk_cauchy_is_base_schedule() {
        let spec = SdeSpec::vp(3);
        let m = NoiseModel::cauchy(vec![0.0; 3]).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let c = general_risk_coefficients(&spec, &m, t).unwrap();
            let (_, v0_sq) = spec.base_schedules(t).unwrap();
            assert!(c.all_stable());
            assert!(c.v.iter().all(|&v| v == v0_sq.sqrt()));
        }
    }

    #[test]
    fn custom_noise_uses_quadrature() {
        let r = 0.8;
        let custom = CustomNoise {
            charfn: Arc::new(move |y: &[f64]| Complex::new((-0.5 * r * r * y[0] * y[0]).exp(), 0.0)),
            sampler: Arc::new(move |g: &mut dyn RngCore| {
                let z: f64 = StandardNormal.sample(g);
                vec![r * z]
            }),
            weight: WeightFunction::default(),
        };
        let m = NoiseModel::custom(custom, vec![r]).unwrap();
        let spec = SdeSpec::vp(1);
        let d = Deduction::new(&m).unwrap();
        let c = d.coefficients(&spec, 0.6).unwrap();
        let e = spec.risk_coefficients(&[r], 0.6).unwrap();
        assert!((c.v[0] - e.v[0]).abs() < 1e-6);
        let ga = d.diffusion(&spec, 0.6).unwrap()[0];
        let gb = spec.diffusion(&[r], 0.6).unwrap()[0];
        assert!((ga - gb).abs() < 1e-4 * gb);
        let mut g = rng(4);
        assert_eq!(m.sample(&mut g).len(), 1);
    }

    #[test]
    fn builtin_charfns_are_valid() {
        let mut g = rng(5);
        for m in [
            NoiseModel::gaussian(vec![0.3, 2.0]).unwrap(),
            NoiseModel::cauchy(vec![0.3, 2.0]).unwrap(),
        ] {
            assert_eq!(m.charfn(&[0.0, 0.0]), Complex::new(1.0, 0.0));
            for _ in 0..200 {
                let y = [g.gen_range(-10.0..10.0), g.gen_range(-10.0..10.0)];
                assert!(m.charfn(&y).norm() <= 1.0);
            }
        }
    }

    #[test]
    fn vp_cauchy_diffusion_stays_real() {
        let spec = SdeSpec::vp(2);
        let m = NoiseModel::cauchy(vec![1.0, 0.5]).unwrap();
        let d = Deduction::new(&m).unwrap();
        let iv = d.stability_interval(&spec).unwrap();
        let t0 = iv.t_star.unwrap();
        for k in 0..=20 {
            let t = t0 + (1.0 - t0) * k as f64 / 20.0;
            let g = d.diffusion(&spec, t).unwrap();
            assert!(g.iter().all(|v| v.is_finite() && *v > 0.0), "{g:?} at {t}");
        }
    }
}
