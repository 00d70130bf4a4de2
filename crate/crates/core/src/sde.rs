//! Base VP/VE diffusions and the Gaussian risk-sensitive coefficient algebra.
//!
//! Every diffusion here has a Gaussian forward kernel
//! `x(t) | x(0) ~ N(u(t) x(0), v0(t)^2 I)`. For a sample corrupted by
//! `N(0, diag(r^2))` the risk-adjusted kernel keeps `u(t)` and shrinks the
//! noise level to `v(r, t)^2 = max(v0(t)^2 - r^2 u(t)^2, 0)`. Entries where
//! the `max` is inactive are stable: there the corrupted marginal coincides
//! with the clean one.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeFamily {
    Vp,
    Ve,
}

/// A base diffusion: linear `beta(t)` for VP, geometric `sigma(t)` for VE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    pub family: SdeFamily,
    #[serde(default = "default_horizon", alias = "T")]
    pub horizon: f64,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(alias = "D")]
    pub dim: usize,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_beta_min() -> f64 {
    0.1
}
fn default_beta_max() -> f64 {
    20.0
}
fn default_sigma_min() -> f64 {
    0.01
}
fn default_sigma_max() -> f64 {
    50.0
}

/// Risk-adjusted kernel coefficients at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCoefficients {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub stable: Vec<bool>,
}

impl RiskCoefficients {
    pub fn all_stable(&self) -> bool {
        self.stable.iter().all(|&s| s)
    }
}

/// `[t_star, upper]`, or empty when no time in `[0, T]` is stable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityInterval {
    pub t_star: Option<f64>,
    pub upper: f64,
}

impl StabilityInterval {
    pub fn full(horizon: f64) -> Self {
        Self {
            t_star: Some(0.0),
            upper: horizon,
        }
    }

    pub fn empty(horizon: f64) -> Self {
        Self {
            t_star: None,
            upper: horizon,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.t_star.is_none()
    }

    pub fn contains(&self, t: f64) -> bool {
        matches!(self.t_star, Some(s) if t >= s && t <= self.upper)
    }

    pub fn length(&self) -> f64 {
        self.t_star.map_or(0.0, |s| self.upper - s)
    }
}

const BISECTION_TOL: f64 = 1e-9;

impl SdeSpec {
    pub fn vp(dim: usize) -> Self {
        Self {
            family: SdeFamily::Vp,
            horizon: 1.0,
            beta_min: 0.1,
            beta_max: 20.0,
            sigma_min: default_sigma_min(),
            sigma_max: default_sigma_max(),
            dim,
        }
    }

    pub fn ve(dim: usize) -> Self {
        Self {
            family: SdeFamily::Ve,
            horizon: 1.0,
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
            sigma_min: 0.01,
            sigma_max: 50.0,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return invalid("horizon T must be positive");
        }
        if self.dim == 0 {
            return invalid("dimension must be positive");
        }
        match self.family {
            SdeFamily::Vp => {
                if !(self.beta_min > 0.0 && self.beta_max > 0.0) {
                    return invalid("beta(t) must stay positive on [0, T]");
                }
            }
            SdeFamily::Ve => {
                if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) {
                    return invalid("sigma(t) must be positive and strictly increasing");
                }
            }
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return invalid(format!("t = {t} outside [0, {}]", self.horizon));
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t / self.horizon
    }

    /// `int_0^t beta(s) ds`
    pub fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t / self.horizon
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(t / self.horizon)
    }

    /// Scale `u(t)` and clean noise variance `v0(t)^2`.
    pub fn base_schedules(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        Ok(self.schedules_unchecked(t))
    }

    pub(crate) fn schedules_unchecked(&self, t: f64) -> (f64, f64) {
        match self.family {
            SdeFamily::Vp => {
                let b = self.beta_integral(t);
                ((-0.5 * b).exp(), -(-b).exp_m1())
            }
            SdeFamily::Ve => {
                let s = self.sigma(t);
                (1.0, s * s - self.sigma_min * self.sigma_min)
            }
        }
    }

    /// Scalar drift `f(t) = d ln u / dt`; risk independent.
    pub fn drift(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.family {
            SdeFamily::Vp => -0.5 * self.beta(t),
            SdeFamily::Ve => 0.0,
        })
    }

    /// Diffusion of the clean process, `g(0, t)`.
    pub fn base_diffusion(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.family {
            SdeFamily::Vp => self.beta(t).sqrt(),
            SdeFamily::Ve => {
                let rate = 2.0 * (self.sigma_max / self.sigma_min).ln() / self.horizon;
                self.sigma(t) * rate.sqrt()
            }
        })
    }

    /// Standard deviation of the sampling prior at `t = T`.
    pub fn prior_std(&self) -> f64 {
        match self.family {
            SdeFamily::Vp => 1.0,
            SdeFamily::Ve => self.schedules_unchecked(self.horizon).1.sqrt(),
        }
    }

    pub fn risk_coefficients(&self, r: &[f64], t: f64) -> Result<RiskCoefficients> {
        check_risk(r)?;
        let (u, v0_sq) = self.base_schedules(t)?;
        let deduction: Vec<f64> = r.iter().map(|ri| ri * ri * u * u).collect();
        Ok(coefficients_from_deduction(u, v0_sq, &deduction))
    }

    /// Per-entry `g(r, t)`: the clean diffusion where the entry is stable at
    /// `t` and zero elsewhere (right derivative at the kink).
    pub fn diffusion(&self, r: &[f64], t: f64) -> Result<Vec<f64>> {
        check_risk(r)?;
        let (u, v0_sq) = self.base_schedules(t)?;
        let g = self.base_diffusion(t)?;
        Ok(r
            .iter()
            .map(|ri| {
                let d = ri * ri * u * u;
                // the right derivative at equality belongs to the stable side
                if v0_sq >= d {
                    g
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Least `t` with `v0(t)^2 >= max_j r_j^2 u(t)^2`.
    pub fn stability_interval(&self, r: &[f64]) -> Result<StabilityInterval> {
        check_risk(r)?;
        let m = r.iter().fold(0.0_f64, |a, &ri| a.max(ri * ri));
        if m == 0.0 {
            return Ok(StabilityInterval::full(self.horizon));
        }
        let t_star = match self.family {
            SdeFamily::Vp => {
                // int_0^t beta >= ln(1 + m), a quadratic in t
                let target = m.ln_1p();
                let a = 0.5 * (self.beta_max - self.beta_min) / self.horizon;
                let b = self.beta_min;
                if a.abs() < 1e-300 {
                    target / b
                } else {
                    2.0 * target / (b + (b * b + 4.0 * a * target).sqrt())
                }
            }
            SdeFamily::Ve => {
                let s2 = self.sigma_min * self.sigma_min + m;
                self.horizon * (0.5 * s2.ln() - self.sigma_min.ln())
                    / (self.sigma_max / self.sigma_min).ln()
            }
        };
        if t_star > self.horizon {
            Ok(StabilityInterval::empty(self.horizon))
        } else {
            Ok(StabilityInterval {
                t_star: Some(t_star.max(0.0)),
                upper: self.horizon,
            })
        }
    }

    /// Stability interval for an arbitrary variance deduction `Psi(t)`,
    /// found by bisection on `v0(t)^2 - max_j Psi_j(t)`, which must be
    /// nondecreasing in `t`.
    pub fn stability_interval_with<F>(&self, mut max_deduction: F) -> Result<StabilityInterval>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let mut excess = |t: f64| -> Result<f64> {
            let (_, v0_sq) = self.schedules_unchecked(t);
            Ok(v0_sq - max_deduction(t)?)
        };
        if excess(0.0)? >= 0.0 {
            return Ok(StabilityInterval::full(self.horizon));
        }
        if excess(self.horizon)? < 0.0 {
            return Ok(StabilityInterval::empty(self.horizon));
        }
        let (mut lo, mut hi) = (0.0, self.horizon);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if excess(mid)? >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(StabilityInterval {
            t_star: Some(hi),
            upper: self.horizon,
        })
    }

    /// Draws `u(t) x0 + v(r, t) * eta`, `eta ~ N(0, I)`.
    pub fn forward_kernel_sample<R: Rng + ?Sized>(
        &self,
        r: &[f64],
        t: f64,
        x0: &Tensor,
        rng: &mut R,
    ) -> Result<Tensor> {
        if r.len() != x0.len() {
            return invalid("risk and sample dimensions differ");
        }
        let c = self.risk_coefficients(r, t)?;
        Ok(Tensor::vector(
            x0.data()
                .iter()
                .zip(&c.v)
                .map(|(&x, &v)| {
                    let eta: f64 = rng.sample(StandardNormal);
                    c.u[0] * x + v * eta
                })
                .collect(),
        ))
    }
}

pub(crate) fn check_risk(r: &[f64]) -> Result<()> {
    if let Some(bad) = r.iter().find(|&&ri| !(ri >= 0.0) || !ri.is_finite()) {
        return invalid(format!("risk entries must be finite and nonnegative, got {bad}"));
    }
    Ok(())
}

/// Builds coefficients from `v0^2` and a per-entry variance deduction.
pub(crate) fn coefficients_from_deduction(u: f64, v0_sq: f64, deduction: &[f64]) -> RiskCoefficients {
    let mut v = Vec::with_capacity(deduction.len());
    let mut stable = Vec::with_capacity(deduction.len());
    for &d in deduction {
        stable.push(v0_sq >= d);
        v.push((v0_sq - d).max(0.0).sqrt());
    }
    RiskCoefficients {
        u: vec![u; deduction.len()],
        v,
        stable,
    }
}

/// Coefficients consumed by reverse-time samplers.
pub trait ReverseCoefficients {
    fn horizon(&self) -> f64;
    fn drift(&self, t: f64) -> Result<f64>;
    fn diffusion(&self, r: &[f64], t: f64) -> Result<Vec<f64>>;
    fn prior_std(&self) -> f64;
}

impl ReverseCoefficients for SdeSpec {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn drift(&self, t: f64) -> Result<f64> {
        SdeSpec::drift(self, t)
    }

    fn diffusion(&self, r: &[f64], t: f64) -> Result<Vec<f64>> {
        SdeSpec::diffusion(self, r, t)
    }

    fn prior_std(&self) -> f64 {
        SdeSpec::prior_std(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_vp() -> SdeSpec {
        SdeSpec {
            beta_min: 0.1,
            beta_max: 20.0,
            ..SdeSpec::vp(2)
        }
    }

    #[test]
    fn vp_boundary_and_reference_values() {
        let s = reference_vp();
        assert_eq!(s.base_schedules(0.0).unwrap(), (1.0, 0.0));
        let (u, v0_sq) = s.base_schedules(0.26).unwrap();
        // int beta = 0.1 t + 9.95 t^2 = 0.69862 at t = 0.26
        let alpha = (-0.69862_f64).exp();
        assert!((u * u - alpha).abs() < 1e-12);
        assert!((v0_sq - (1.0 - alpha)).abs() < 1e-12);
        assert!((u * u - 0.4973).abs() < 5e-5);
    }

    #[test]
    fn ve_terminal_variance() {
        let s = SdeSpec::ve(1);
        let (u, v0_sq) = s.base_schedules(1.0).unwrap();
        assert_eq!(u, 1.0);
        assert!((v0_sq - (2500.0 - 1e-4)).abs() < 1e-9);
        assert!((s.prior_std() - (2500.0_f64 - 1e-4).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn time_outside_horizon_is_rejected() {
        let s = reference_vp();
        assert!(s.base_schedules(-0.1).is_err());
        assert!(s.base_schedules(1.5).is_err());
        assert!(s.drift(2.0).is_err());
    }

    #[test]
    fn risk_coefficients_reference_points() {
        let s = reference_vp();
        let c = s.risk_coefficients(&[1.0, 1.0], 0.26).unwrap();
        let alpha = (-0.69862_f64).exp();
        for v in &c.v {
            assert!((v * v - (1.0 - 2.0 * alpha)).abs() < 1e-12);
            assert!((v * v - 0.0054).abs() < 1e-4);
        }
        assert_eq!(c.stable, vec![true, true]);

        let c = s.risk_coefficients(&[1.0, 1.0], 0.1).unwrap();
        assert_eq!(c.v, vec![0.0, 0.0]);
        assert_eq!(c.stable, vec![false, false]);

        assert!(s.risk_coefficients(&[-0.5, 1.0], 0.5).is_err());
    }

    #[test]
    fn zero_risk_reduces_to_base_schedule() {
        let s = reference_vp();
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            let (u, v0_sq) = s.base_schedules(t).unwrap();
            let c = s.risk_coefficients(&[0.0, 0.0], t).unwrap();
            assert!(c.all_stable());
            assert_eq!(c.u, vec![u, u]);
            assert_eq!(c.v, vec![v0_sq.sqrt(), v0_sq.sqrt()]);
        }
    }

    #[test]
    fn drift_values() {
        let s = reference_vp();
        assert!((s.drift(0.0).unwrap() + 0.05).abs() < 1e-15);
        assert!((s.drift(1.0).unwrap() + 10.0).abs() < 1e-12);
        let ve = SdeSpec::ve(3);
        assert_eq!(ve.drift(0.37).unwrap(), 0.0);
    }

    #[test]
    fn diffusion_values() {
        let s = reference_vp();
        for t in [0.0, 0.4, 1.0] {
            let g = s.diffusion(&[0.0, 0.0], t).unwrap();
            assert_eq!(g, vec![s.beta(t).sqrt(); 2]);
        }
        assert_eq!(s.diffusion(&[1.0, 1.0], 0.1).unwrap(), vec![0.0, 0.0]);

        let ve = SdeSpec::ve(1);
        let g = ve.diffusion(&[1.0], 0.9).unwrap()[0];
        let expect = ve.sigma(0.9) * (2.0 * (50.0_f64 / 0.01).ln()).sqrt();
        assert!((g - expect).abs() < 1e-9 * expect);
        // finite-difference check of d sigma^2 / dt
        let h = 1e-6;
        let fd = (ve.sigma(0.9 + h).powi(2) - ve.sigma(0.9 - h).powi(2)) / (2.0 * h);
        assert!((g * g - fd).abs() < 1e-6 * fd);
    }

    #[test]
    fn stability_interval_reference_values() {
        let s = reference_vp();
        assert_eq!(s.stability_interval(&[0.0, 0.0]).unwrap(), StabilityInterval::full(1.0));
        let iv = s.stability_interval(&[1.0, 0.3]).unwrap();
        let t = iv.t_star.unwrap();
        assert!((t - 0.259).abs() < 1e-3, "t_star = {t}");

        let ve = SdeSpec::ve(1);
        let t = ve.stability_interval(&[1.0]).unwrap().t_star.unwrap();
        assert!((t - 0.5407).abs() < 1e-4, "t_star = {t}");

        let huge = ve.stability_interval(&[60.0]).unwrap();
        assert!(huge.is_empty());
    }

    #[test]
    fn closed_form_interval_agrees_with_bisection() {
        for s in [reference_vp(), SdeSpec::ve(2)] {
            for r in [0.2, 0.5, 1.0, 2.0, 3.0] {
                let closed = s.stability_interval(&[r, 0.0]).unwrap();
                let bis = s
                    .stability_interval_with(|t| {
                        let (u, _) = s.schedules_unchecked(t);
                        Ok(r * r * u * u)
                    })
                    .unwrap();
                assert_eq!(closed.is_empty(), bis.is_empty());
                if let (Some(a), Some(b)) = (closed.t_star, bis.t_star) {
                    assert!((a - b).abs() < 1e-8, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn conservation_on_stable_entries() {
        let s = reference_vp();
        let r = [0.3, 1.0, 1.7];
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let (u, v0_sq) = s.base_schedules(t).unwrap();
            let c = s.risk_coefficients(&r, t).unwrap();
            for j in 0..3 {
                if c.stable[j] {
                    let lhs = u * u * r[j] * r[j] + c.v[j] * c.v[j];
                    assert!((lhs - v0_sq).abs() <= 4.0 * f64::EPSILON * v0_sq.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn kernel_sample_at_zero_time_is_identity() {
        let s = reference_vp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = Tensor::vector(vec![0.25, -3.0]);
        let x = s.forward_kernel_sample(&[0.0, 0.0], 0.0, &x0, &mut rng).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn kernel_sample_moments() {
        let s = reference_vp();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = Tensor::vector(vec![1.0, 0.0]);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let x = s.forward_kernel_sample(&[1.0, 1.0], 0.26, &x0, &mut rng).unwrap();
            for j in 0..2 {
                sum[j] += x.data()[j];
                sq[j] += x.data()[j] * x.data()[j];
            }
        }
        let u = (-0.5 * 0.69862_f64).exp();
        let v_sq = 1.0 - 2.0 * (-0.69862_f64).exp();
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        assert!((mean[0] - u).abs() < 0.01 && (u - 0.7052).abs() < 1e-4);
        assert!(mean[1].abs() < 0.01);
        for j in 0..2 {
            let var = sq[j] / n as f64 - mean[j] * mean[j];
            assert!((var - v_sq).abs() < 0.2 * v_sq, "var {var}");
        }
    }

    #[test]
    fn interval_shrinks_as_risk_grows() {
        let s = reference_vp();
        let mut prev = 0.0;
        for k in 0..40 {
            let r = k as f64 * 0.1;
            let iv = s.stability_interval(&[r]).unwrap();
            let t = iv.t_star.unwrap_or(f64::INFINITY);
            assert!(t >= prev);
            prev = t;
        }
    }
}
