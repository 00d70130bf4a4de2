//! Sample-quality metrics: Frechet distance between Gaussian fits, PRD
//! curves from cluster histograms, mixture coverage and balance, and an
//! energy-distance permutation test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::MixtureSpec;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

fn mean_cov(x: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = DVector::from_fn(d, |j, _| m.column(j).sum() / n as f64);
    let mut c = DMatrix::zeros(d, d);
    for i in 0..n {
        let r = m.row(i).transpose() - &mean;
        c += &r * r.transpose();
    }
    (mean, c / (n as f64 - 1.0))
}

/// Symmetric square root with negative eigenvalues clamped at zero; also
/// reports whether clamping was significant.
fn sqrt_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let clamped = eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&roots) * q.transpose(), clamped)
}

fn rank_deficient(c: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let hi = eig.eigenvalues.max();
    eig.eigenvalues.min() <= 1e-12 * hi.max(1e-300)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frechet {
    pub value: f64,
    pub warning: Option<String>,
}

/// `|mu_g - mu_r|^2 + tr(S_g + S_r - 2 (S_r^1/2 S_g S_r^1/2)^1/2)`.
pub fn frechet(generated: &Tensor, reference: &Tensor) -> Result<Frechet> {
    let d = reference.cols();
    if generated.cols() != d {
        return invalid("sample sets differ in dimension");
    }
    if generated.rows() < d + 1 || reference.rows() < d + 1 {
        return invalid(format!("each set needs at least {} samples", d + 1));
    }
    let (mg, cg) = mean_cov(generated);
    let (mr, cr) = mean_cov(reference);
    let (sr, c1) = sqrt_psd(&cr);
    let (inner, c2) = sqrt_psd(&(&sr * &cg * &sr));
    let value = (mg - mr).norm_squared() + cg.trace() + cr.trace() - 2.0 * inner.trace();
    let warning = (c1 || c2 || rank_deficient(&cg) || rank_deficient(&cr))
        .then(|| "covariance is rank deficient; square roots were clamped".to_string());
    Ok(Frechet {
        value: value.max(0.0),
        warning,
    })
}

pub fn frechet_distance(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    Ok(frechet(generated, reference)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrdOptions {
    pub clusters: usize,
    pub angles: usize,
    pub runs: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for PrdOptions {
    fn default() -> Self {
        Self {
            clusters: 20,
            angles: 1001,
            runs: 10,
            kmeans_iterations: 100,
            seed: 0,
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding; returns labels.
pub fn kmeans<R: Rng + ?Sized>(x: &Tensor, k: usize, iterations: usize, rng: &mut R) -> Result<Vec<usize>> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || n < k {
        return invalid(format!("k-means with {k} clusters on {n} points"));
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.gen_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(dist2(x.row(i), &c));
        }
        centers.push(c);
    }
    let mut labels = vec![0usize; n];
    for it in 0..iterations.max(1) {
        let mut changed = false;
        for i in 0..n {
            let row = x.row(i);
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let dd = dist2(row, center);
                if dd < best.0 {
                    best = (dd, c);
                }
            }
            if labels[i] != best.1 || it == 0 {
                changed |= labels[i] != best.1;
                labels[i] = best.1;
            }
        }
        if !changed && it > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(labels)
}

const PRD_EPS: f64 = 1e-10;

/// PRD points for two histograms over the same bins.
pub fn prd_from_histograms(eval: &[f64], reference: &[f64], angles: usize) -> Vec<(f64, f64)> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let m = angles.max(2);
    (0..m)
        .map(|i| {
            let a = PRD_EPS + (half_pi - 2.0 * PRD_EPS) * i as f64 / (m - 1) as f64;
            let slope = a.tan();
            let precision: f64 = reference
                .iter()
                .zip(eval)
                .map(|(r, e)| (r * slope).min(*e))
                .sum();
            let recall = precision / slope;
            (precision.clamp(0.0, 1.0), recall.clamp(0.0, 1.0))
        })
        .collect()
}

/// Averaged PRD curve of `generated` against `reference`, sorted by recall.
pub fn prd_curve(generated: &Tensor, reference: &Tensor, opts: &PrdOptions) -> Result<Vec<(f64, f64)>> {
    if generated.rows() == 0 || reference.rows() == 0 {
        return invalid("PRD needs two nonempty sample sets");
    }
    if generated.cols() != reference.cols() {
        return invalid("sample sets differ in dimension");
    }
    if opts.clusters < 2 || opts.runs == 0 {
        return invalid("PRD needs at least two clusters and one run");
    }
    let ng = generated.rows();
    let mut union = generated.data().to_vec();
    union.extend_from_slice(reference.data());
    let union = Tensor::new(union, vec![ng + reference.rows(), generated.cols()])?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let m = opts.angles.max(2);
    let mut acc = vec![(0.0, 0.0); m];
    for _ in 0..opts.runs {
        let labels = kmeans(&union, opts.clusters, opts.kmeans_iterations, &mut rng)?;
        let mut eval = vec![0.0; opts.clusters];
        let mut refh = vec![0.0; opts.clusters];
        for (i, &l) in labels.iter().enumerate() {
            if i < ng {
                eval[l] += 1.0;
            } else {
                refh[l] += 1.0;
            }
        }
        let se: f64 = eval.iter().sum();
        let sr: f64 = refh.iter().sum();
        eval.iter_mut().for_each(|v| *v /= se);
        refh.iter_mut().for_each(|v| *v /= sr);
        for (a, p) in acc.iter_mut().zip(prd_from_histograms(&eval, &refh, m)) {
            a.0 += p.0;
            a.1 += p.1;
        }
    }
    let runs = opts.runs as f64;
    let mut curve: Vec<(f64, f64)> = acc.into_iter().map(|(p, r)| (p / runs, r / runs)).collect();
    curve.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)));
    Ok(curve)
}

/// Best recall reachable at precision at least `p`, for each `p` in `grid`.
pub fn recall_at_precision(curve: &[(f64, f64)], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&p| {
            curve
                .iter()
                .filter(|pt| pt.0 >= p - 1e-12)
                .map(|pt| pt.1)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `n` evenly spaced precision levels on `[0, 1]`.
pub fn precision_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Max-envelope of a recall-sorted curve: precision at each point is the
/// best precision available at that recall or higher.
pub fn prd_envelope(curve: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = curve.to_vec();
    let mut best = 0.0_f64;
    for pt in out.iter_mut().rev() {
        best = best.max(pt.0);
        pt.0 = best;
    }
    out
}

/// Mahalanobis-distance geometry of a mixture.
pub struct MixtureGeometry {
    means: Vec<DVector<f64>>,
    precisions: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
}

impl MixtureGeometry {
    pub fn new(mix: &MixtureSpec) -> Result<Self> {
        mix.validate()?;
        Ok(Self {
            means: mix.means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            precisions: mix.precisions()?,
            weights: mix.weights.clone(),
        })
    }

    /// `(component, squared distance)` of the closest component.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let v = DVector::from_column_slice(x);
        let mut best = (0, f64::INFINITY);
        for (k, (m, p)) in self.means.iter().zip(&self.precisions).enumerate() {
            let r = &v - m;
            let d2 = (r.transpose() * p * &r)[(0, 0)];
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        best
    }
}

/// Fraction of rows within Mahalanobis distance 3 of some component.
pub fn three_sigma_coverage(generated: &Tensor, mix: &MixtureSpec) -> Result<f64> {
    Ok(1.0 - fraction_beyond(generated, mix, 3.0)?)
}

/// Fraction of rows farther than `radius` (Mahalanobis) from every component.
pub fn fraction_beyond(generated: &Tensor, mix: &MixtureSpec, radius: f64) -> Result<f64> {
    if generated.cols() != mix.dim() {
        return invalid("sample dimension differs from the mixture");
    }
    let n = generated.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let geo = MixtureGeometry::new(mix)?;
    let r2 = radius * radius;
    let far = (0..n).filter(|&i| geo.nearest(generated.row(i)).1 > r2).count();
    Ok(far as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBalance {
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
    pub max_deviation: f64,
}

impl ComponentBalance {
    /// `target - weight` for component `k`.
    pub fn deficit(&self, k: usize) -> f64 {
        self.targets[k] - self.weights[k]
    }
}

pub fn component_balance(generated: &Tensor, mix: &MixtureSpec) -> Result<ComponentBalance> {
    if generated.cols() != mix.dim() {
        return invalid("sample dimension differs from the mixture");
    }
    let geo = MixtureGeometry::new(mix)?;
    let n = generated.rows();
    let mut counts = vec![0.0; mix.components()];
    for i in 0..n {
        counts[geo.nearest(generated.row(i)).0] += 1.0;
    }
    let weights: Vec<f64> = counts.iter().map(|c| if n > 0 { c / n as f64 } else { 0.0 }).collect();
    let max_deviation = weights
        .iter()
        .zip(&mix.weights)
        .map(|(w, t)| (w - t).abs())
        .fold(0.0, f64::max);
    Ok(ComponentBalance {
        weights,
        targets: mix.weights.clone(),
        max_deviation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations_run: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyOptions {
    /// Each group is subsampled to at most this many rows.
    pub max_per_group: usize,
    pub permutations: usize,
    /// Sequential stopping: end once this many permuted statistics reach
    /// the observed one, reporting `p = h / k` after `k` permutations.
    pub stop_after: Option<usize>,
    pub seed: u64,
}

/// Two-sample energy-distance permutation test on at most `max_per_group`
/// rows per group.
pub fn energy_test(
    a: &Tensor,
    b: &Tensor,
    max_per_group: usize,
    permutations: usize,
    seed: u64,
) -> Result<EnergyTest> {
    energy_test_with(
        a,
        b,
        &EnergyOptions {
            max_per_group,
            permutations,
            stop_after: None,
            seed,
        },
    )
}

pub fn energy_test_with(a: &Tensor, b: &Tensor, opts: &EnergyOptions) -> Result<EnergyTest> {
    let (max_per_group, permutations, seed) = (opts.max_per_group, opts.permutations, opts.seed);
    if opts.stop_after == Some(0) {
        return invalid("sequential stopping needs at least one exceedance");
    }
    if a.rows() < 2 || b.rows() < 2 || a.cols() != b.cols() {
        return invalid("energy test needs two sets of at least two rows of equal dimension");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |x: &Tensor, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..x.rows()).collect();
        if idx.len() > max_per_group {
            idx.shuffle(rng);
            idx.truncate(max_per_group);
        }
        idx
    };
    let ia = pick(a, &mut rng);
    let ib = pick(b, &mut rng);
    let rows: Vec<&[f64]> = ia.iter().map(|&i| a.row(i)).chain(ib.iter().map(|&i| b.row(i))).collect();
    let n = rows.len();
    let na = ia.len();
    // packed strict upper triangle; row i holds d(i, j) for j > i
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let mut dist = vec![0.0; n * (n - 1) / 2];
    let mut row_total = vec![0.0; n];
    for i in 0..n {
        let base = offset(i);
        for j in i + 1..n {
            let dd = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            dist[base + j - i - 1] = dd;
            row_total[i] += dd;
        }
    }
    let total: f64 = row_total.iter().sum();
    let (p, q) = (na as f64, (n - na) as f64);
    // with indicator a of the first group over unordered pairs:
    // within-first = sum_i a_i sum_{j>i} a_j d_ij, within-second follows from
    // the row totals, and the cross sum is what remains
    let stat = |group: &[f64]| -> f64 {
        let (mut xx, mut yy) = (0.0, 0.0);
        for i in 0..n {
            let seg = &dist[offset(i)..offset(i) + n - i - 1];
            let s: f64 = seg.iter().zip(&group[i + 1..]).map(|(d, g)| d * g).sum();
            if group[i] > 0.5 {
                xx += s;
            } else {
                yy += row_total[i] - s;
            }
        }
        let xy = total - xx - yy;
        2.0 * xy / (p * q) - 2.0 * xx / (p * p) - 2.0 * yy / (q * q)
    };
    let mut labels: Vec<f64> = (0..n).map(|i| if i < na { 1.0 } else { 0.0 }).collect();
    let observed = stat(&labels);
    let mut exceed = 0usize;
    for k in 1..=permutations {
        labels.shuffle(&mut rng);
        if stat(&labels) >= observed - 1e-12 * observed.abs() {
            exceed += 1;
            if opts.stop_after == Some(exceed) {
                return Ok(EnergyTest {
                    statistic: observed,
                    p_value: exceed as f64 / k as f64,
                    permutations_run: k,
                });
            }
        }
    }
    Ok(EnergyTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations_run: permutations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMetrics {
    pub three_sigma_coverage: f64,
    /// Coverage of the reference draws.
    pub coverage_ceiling: f64,
    pub beyond_six_sigma: f64,
    pub component_balance: ComponentBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub frechet: f64,
    pub frechet_warning: Option<String>,
    pub prd: Vec<(f64, f64)>,
    /// Present when the clean distribution is a known mixture.
    pub mixture: Option<MixtureMetrics>,
}

/// Scores `generated` against clean `reference` draws.
pub fn evaluate(
    generated: &Tensor,
    reference: &Tensor,
    mix: Option<&MixtureSpec>,
    prd: &PrdOptions,
) -> Result<EvalReport> {
    let f = frechet(generated, reference)?;
    let mixture = match mix {
        Some(m) => Some(MixtureMetrics {
            three_sigma_coverage: three_sigma_coverage(generated, m)?,
            coverage_ceiling: three_sigma_coverage(reference, m)?,
            beyond_six_sigma: fraction_beyond(generated, m, 6.0)?,
            component_balance: component_balance(generated, m)?,
        }),
        None => None,
    };
    Ok(EvalReport {
        samples: generated.rows(),
        frechet: f.value,
        frechet_warning: f.warning,
        prd: prd_curve(generated, reference, prd)?,
        mixture,
    })
}
