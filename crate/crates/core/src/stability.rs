//! Empirical perturbation instability: a weighted squared distance between
//! the log characteristic functions of a risky and a clean sample set.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Empirical characteristic function at a list of points.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFnEstimate {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<(f64, f64)>,
    pub samples: usize,
}

impl CharFnEstimate {
    pub fn modulus(&self, i: usize) -> f64 {
        let (re, im) = self.values[i];
        re.hypot(im)
    }

    pub fn phase(&self, i: usize) -> f64 {
        let (re, im) = self.values[i];
        im.atan2(re)
    }
}

/// `(1/N) sum_n exp(i y^T x_n)` for every `y` in `points`.
pub fn empirical_charfn(samples: &Tensor, points: &[Vec<f64>]) -> Result<CharFnEstimate> {
    let n = samples.rows();
    if n == 0 {
        return invalid("empirical characteristic function of an empty sample set");
    }
    let d = samples.cols();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return invalid(format!("evaluation point of dimension {} for {d}-d samples", p.len()));
    }
    let values = points
        .iter()
        .map(|y| {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let phase: f64 = samples.row(i).iter().zip(y).map(|(a, b)| a * b).sum();
                let (s, c) = phase.sin_cos();
                re += c;
                im += s;
            }
            (re / n as f64, im / n as f64)
        })
        .collect();
    Ok(CharFnEstimate {
        points: points.to_vec(),
        values,
        samples: n,
    })
}

/// Evaluation nodes for the instability integral.
///
/// Points come in consecutive runs of `ray_len` where the k-th point of a
/// run is `k + 1` times the first; `ray_len = 1` means no structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub ray_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub directions: usize,
    pub radii: usize,
    /// Largest radius in units where `y^T Sigma y = radius^2`.
    pub max_radius: f64,
    /// Nodes where the clean estimate is below this modulus are dropped.
    pub modulus_floor: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            directions: 32,
            radii: 16,
            max_radius: 3.0,
            modulus_floor: 0.05,
        }
    }
}

impl ProbeGrid {
    /// Random directions times evenly spaced radii, each direction scaled by
    /// the sample covariance so `y^T Sigma y` runs over `(0, max_radius^2]`.
    pub fn from_samples<R: Rng + ?Sized>(reference: &Tensor, opts: &ProbeOptions, rng: &mut R) -> Result<Self> {
        let n = reference.rows();
        let d = reference.cols();
        if n < 2 || d == 0 {
            return invalid("probe grid needs at least two reference samples");
        }
        if opts.directions == 0 || opts.radii == 0 || !(opts.max_radius > 0.0) {
            return invalid("probe grid needs directions, radii and a positive max radius");
        }
        let cov = covariance(reference);
        let mut points = Vec::with_capacity(opts.directions * opts.radii);
        for _ in 0..opts.directions {
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            dir.iter_mut().for_each(|v| *v /= norm);
            let mut quad = 0.0;
            for a in 0..d {
                for b in 0..d {
                    quad += dir[a] * cov[a * d + b] * dir[b];
                }
            }
            let scale = 1.0 / quad.max(1e-300).sqrt();
            for k in 1..=opts.radii {
                let rho = opts.max_radius * k as f64 / opts.radii as f64;
                points.push(dir.iter().map(|v| v * rho * scale).collect());
            }
        }
        let w = 1.0 / points.len() as f64;
        Ok(Self {
            weights: vec![w; points.len()],
            points,
            ray_len: opts.radii,
        })
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.ray_len == 0 || self.points.len() % self.ray_len != 0 {
            return invalid("probe grid length is not a multiple of its ray length");
        }
        if let Some(p) = self.points.iter().find(|p| p.len() != d) {
            return invalid(format!("evaluation point of dimension {} for {d}-d samples", p.len()));
        }
        Ok(())
    }

    /// Adds `(cos, sin)` of `y^T x` for every node into `out`, one sine and
    /// cosine per ray with the rest by complex powers.
    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        for (r, ray) in self.points.chunks_exact(self.ray_len).enumerate() {
            let phase: f64 = ray[0].iter().zip(x).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            let (mut re, mut im) = (c, s);
            let base = 2 * r * self.ray_len;
            for k in 0..self.ray_len {
                out[base + 2 * k] += re;
                out[base + 2 * k + 1] += im;
                (re, im) = (re * c - im * s, re * s + im * c);
            }
        }
    }

    fn estimate(&self, sums: &[f64], n: usize) -> CharFnEstimate {
        let inv = 1.0 / n as f64;
        CharFnEstimate {
            points: self.points.clone(),
            values: sums.chunks_exact(2).map(|v| (v[0] * inv, v[1] * inv)).collect(),
            samples: n,
        }
    }

    /// Empirical characteristic function on this grid.
    pub fn charfn(&self, samples: &Tensor) -> Result<CharFnEstimate> {
        let n = samples.rows();
        if n == 0 {
            return invalid("empirical characteristic function of an empty sample set");
        }
        self.check(samples.cols())?;
        let mut sums = vec![0.0; 2 * self.points.len()];
        for i in 0..n {
            self.accumulate(samples.row(i), &mut sums);
        }
        Ok(self.estimate(&sums, n))
    }
}

fn covariance(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = x.row(i);
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    cov
}

fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

const RISKY_MODULUS_FLOOR: f64 = 1e-12;

/// `sum_k w_k Omega(y_k) |ln chi_risky(y_k) - ln chi_clean(y_k)|^2` with
/// `Omega = |chi_clean|`, the phase difference wrapped to `(-pi, pi]`.
pub fn instability(risky: &Tensor, clean: &Tensor, grid: &ProbeGrid, modulus_floor: f64) -> Result<f64> {
    let a = grid.charfn(risky)?;
    let b = grid.charfn(clean)?;
    instability_from_estimates(&a, &b, &grid.weights, modulus_floor)
}

pub fn instability_from_estimates(
    risky: &CharFnEstimate,
    clean: &CharFnEstimate,
    weights: &[f64],
    modulus_floor: f64,
) -> Result<f64> {
    if risky.values.len() != clean.values.len() || weights.len() != clean.values.len() {
        return invalid("estimates and weights must share the grid");
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for k in 0..weights.len() {
        let mc = clean.modulus(k);
        if mc < modulus_floor {
            continue;
        }
        used += 1;
        let mr = risky.modulus(k).max(RISKY_MODULUS_FLOOR);
        let dl = mr.ln() - mc.ln();
        let dp = wrap_phase(risky.phase(k) - clean.phase(k));
        total += weights[k] * mc * (dl * dl + dp * dp);
    }
    if used == 0 {
        return Err(Error::NumericalFailure(
            "no probe node has a clean modulus above the floor".into(),
        ));
    }
    Ok(total)
}

/// Upper `quantile` of instability between random halves of `pool`.
pub fn null_threshold<R: Rng + ?Sized>(
    pool: &Tensor,
    grid: &ProbeGrid,
    repetitions: usize,
    quantile: f64,
    modulus_floor: f64,
    rng: &mut R,
) -> Result<f64> {
    let n = pool.rows();
    if n < 4 || repetitions == 0 {
        return invalid("null threshold needs at least four samples and one repetition");
    }
    if !(0.0..=1.0).contains(&quantile) {
        return invalid("quantile must lie in [0, 1]");
    }
    grid.check(pool.cols())?;
    let half = n / 2;
    let g2 = 2 * grid.points.len();
    // side[r * n + i]: 0 in the first half, 1 in the second, 2 left out
    let mut side = vec![2u8; repetitions * n];
    let mut idx: Vec<usize> = (0..n).collect();
    for rep in 0..repetitions {
        idx.shuffle(rng);
        for (pos, &i) in idx[..2 * half].iter().enumerate() {
            side[rep * n + i] = u8::from(pos >= half);
        }
    }
    let mut first = vec![0.0; repetitions * g2];
    let mut second = vec![0.0; repetitions * g2];
    let mut feat = vec![0.0; g2];
    for i in 0..n {
        feat.iter_mut().for_each(|v| *v = 0.0);
        grid.accumulate(pool.row(i), &mut feat);
        for rep in 0..repetitions {
            let acc = match side[rep * n + i] {
                0 => &mut first[rep * g2..(rep + 1) * g2],
                1 => &mut second[rep * g2..(rep + 1) * g2],
                _ => continue,
            };
            acc.iter_mut().zip(&feat).for_each(|(a, f)| *a += f);
        }
    }
    let mut stats = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let a = grid.estimate(&first[rep * g2..(rep + 1) * g2], half);
        let b = grid.estimate(&second[rep * g2..(rep + 1) * g2], half);
        stats.push(instability_from_estimates(&a, &b, &grid.weights, modulus_floor)?);
    }
    stats.sort_by(f64::total_cmp);
    let pos = ((stats.len() - 1) as f64 * quantile).round() as usize;
    Ok(stats[pos])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal_samples(n: usize, d: usize, scale: f64, seed: u64) -> Tensor {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| scale * g.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(data, vec![n, d]).unwrap()
    }

    #[test]
    fn charfn_at_origin_is_one() {
        let x = normal_samples(1000, 2, 1.0, 0);
        let e = empirical_charfn(&x, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(e.values[0], (1.0, 0.0));
    }

    #[test]
    fn charfn_of_standard_normal() {
        let n = 40_000;
        let x = normal_samples(n, 1, 1.0, 1);
        let e = empirical_charfn(&x, &[vec![1.0]]).unwrap();
        let expect = (-0.5_f64).exp();
        assert!((e.values[0].0 - expect).abs() < 3.0 / (n as f64).sqrt());
        assert!(e.values[0].1.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn charfn_of_point_mass() {
        let x = Tensor::new(vec![0.3, -1.2].repeat(1000), vec![1000, 2]).unwrap();
        let y = vec![0.7, 2.0];
        let e = empirical_charfn(&x, &[y.clone()]).unwrap();
        let phase = 0.3 * 0.7 - 1.2 * 2.0;
        assert!((e.modulus(0) - 1.0).abs() < 1e-12);
        assert!((e.values[0].0 - f64::cos(phase)).abs() < 1e-12);
        assert!((e.values[0].1 - f64::sin(phase)).abs() < 1e-12);
    }

    #[test]
    fn empty_samples_rejected() {
        let x = Tensor::zeros(vec![0, 2]);
        assert!(empirical_charfn(&x, &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn identical_sets_have_zero_instability() {
        let x = normal_samples(2000, 2, 1.0, 2);
        let mut g = ChaCha8Rng::seed_from_u64(3);
        let grid = ProbeGrid::from_samples(&x, &ProbeOptions::default(), &mut g).unwrap();
        assert_eq!(instability(&x, &x, &grid, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn wider_set_exceeds_null_threshold() {
        let clean = normal_samples(4000, 2, 1.0, 4);
        let pool = normal_samples(8000, 2, 1.0, 5);
        let wide = normal_samples(4000, 2, 1.3, 6);
        let mut g = ChaCha8Rng::seed_from_u64(7);
        let grid = ProbeGrid::from_samples(&clean, &ProbeOptions::default(), &mut g).unwrap();
        let thr = null_threshold(&pool, &grid, 40, 0.95, 0.05, &mut g).unwrap();
        let same = normal_samples(4000, 2, 1.0, 8);
        assert!(instability(&wide, &clean, &grid, 0.05).unwrap() > thr);
        assert!(instability(&same, &clean, &grid, 0.05).unwrap() < 3.0 * thr);
    }

    #[test]
    fn grid_charfn_matches_direct_sum() {
        let x = normal_samples(500, 3, 1.5, 10);
        let mut g = ChaCha8Rng::seed_from_u64(11);
        let grid = ProbeGrid::from_samples(&x, &ProbeOptions::default(), &mut g).unwrap();
        let fast = grid.charfn(&x).unwrap();
        let slow = empirical_charfn(&x, &grid.points).unwrap();
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn null_threshold_matches_explicit_halves() {
        let pool = normal_samples(301, 2, 1.0, 12);
        let mut g = ChaCha8Rng::seed_from_u64(13);
        let grid = ProbeGrid::from_samples(&pool, &ProbeOptions::default(), &mut g).unwrap();
        let fast = null_threshold(&pool, &grid, 5, 1.0, 0.05, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut idx: Vec<usize> = (0..301).collect();
        let mut best = f64::NEG_INFINITY;
        let pick = |ids: &[usize]| Tensor::from_rows(&ids.iter().map(|&i| pool.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        for _ in 0..5 {
            idx.shuffle(&mut rng);
            let v = instability(&pick(&idx[..150]), &pick(&idx[150..300]), &grid, 0.05).unwrap();
            best = best.max(v);
        }
        assert!((fast - best).abs() < 1e-12 * best.max(1.0), "{fast} vs {best}");
    }

    #[test]
    fn phase_wrapping() {
        use std::f64::consts::PI;
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_phase(0.25), 0.25);
    }

    #[test]
    fn grid_without_valid_nodes_fails() {
        let x = normal_samples(1000, 1, 1.0, 9);
        let grid = ProbeGrid {
            points: vec![vec![50.0]],
            weights: vec![1.0],
            ray_len: 1,
        };
        assert!(matches!(instability(&x, &x, &grid, 0.05), Err(Error::NumericalFailure(_))));
    }
}
