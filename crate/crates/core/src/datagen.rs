//! Synthetic risk-annotated data: corrupted Gaussian mixtures and a KNN
//! imputation pipeline that turns missing table cells into risk.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{NoiseKind, NoiseModel};
use crate::tensor::Tensor;

/// A data vector and its per-entry risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSample {
    pub x0: Vec<f64>,
    pub r: Vec<f64>,
}

impl RiskSample {
    pub fn clean(x0: Vec<f64>) -> Self {
        let d = x0.len();
        Self { x0, r: vec![0.0; d] }
    }

    pub fn is_clean(&self) -> bool {
        self.r.iter().all(|&v| v == 0.0)
    }
}

/// Stacks sample vectors into an `n x D` tensor.
pub fn stack_x(samples: &[RiskSample]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.x0.clone()).collect();
    Tensor::from_rows(&rows)
}

/// Scalar risk scale drawn per corrupted sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RiskLaw {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl RiskLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            RiskLaw::Constant { value } if value >= 0.0 && value.is_finite() => Ok(()),
            RiskLaw::Uniform { low, high } if low >= 0.0 && high >= low && high.is_finite() => Ok(()),
            _ => invalid(format!("invalid risk law {self:?}")),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RiskLaw::Constant { value } => value,
            RiskLaw::Uniform { low, high } => low + (high - low) * rng.gen::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    /// Row-major `D x D` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub corruption_fractions: Vec<f64>,
    pub noise: NoiseKind,
    pub risk: RiskLaw,
}

/// Draws with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDraw {
    pub samples: Vec<RiskSample>,
    pub clean: Vec<Vec<f64>>,
    pub components: Vec<usize>,
}

impl MixtureSpec {
    /// Four components at `(+-4, +-4)` with covariance `0.5 I` and equal
    /// weights; the upper-right one is corrupted 95% of the time, the
    /// others 10%, with risk 1.
    pub fn four_corners(noise: NoiseKind) -> Self {
        let means = vec![vec![4.0, 4.0], vec![-4.0, 4.0], vec![-4.0, -4.0], vec![4.0, -4.0]];
        Self {
            covariances: vec![vec![0.5, 0.0, 0.0, 0.5]; 4],
            weights: vec![0.25; 4],
            corruption_fractions: vec![0.95, 0.1, 0.1, 0.1],
            means,
            noise,
            risk: RiskLaw::Constant { value: 1.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        let d = self.dim();
        if k == 0 || d == 0 {
            return invalid("mixture needs at least one component of positive dimension");
        }
        if self.covariances.len() != k || self.weights.len() != k || self.corruption_fractions.len() != k {
            return invalid("means, covariances, weights and corruption fractions must align");
        }
        if self.means.iter().any(|m| m.len() != d) {
            return invalid("component means differ in dimension");
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("component weights must form a probability vector");
        }
        if self.corruption_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return invalid("corruption fractions must lie in [0, 1]");
        }
        for (i, c) in self.covariances.iter().enumerate() {
            if c.len() != d * d {
                return invalid(format!("covariance {i} is not {d} x {d}"));
            }
            let m = DMatrix::from_row_slice(d, d, c);
            if (&m - m.transpose()).amax() > 1e-12 {
                return invalid(format!("covariance {i} is not symmetric"));
            }
            if m.cholesky().is_none() {
                return invalid(format!("covariance {i} is not positive definite"));
            }
        }
        self.risk.validate()
    }

    pub fn cholesky_factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let d = self.dim();
        self.covariances
            .iter()
            .map(|c| {
                DMatrix::from_row_slice(d, d, c)
                    .cholesky()
                    .map(|ch| ch.l())
                    .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))
            })
            .collect()
    }

    /// Inverse covariances, for Mahalanobis distances.
    pub fn precisions(&self) -> Result<Vec<DMatrix<f64>>> {
        let d = self.dim();
        self.covariances
            .iter()
            .map(|c| {
                DMatrix::from_row_slice(d, d, c)
                    .cholesky()
                    .map(|ch| ch.inverse())
                    .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))
            })
            .collect()
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    fn draw_component<R: Rng + ?Sized>(&self, k: usize, chol: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = chol * z;
        self.means[k].iter().zip(x.iter()).map(|(m, v)| m + v).collect()
    }

    /// Uncorrupted mixture draws.
    pub fn sample_clean<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        self.validate()?;
        let chol = self.cholesky_factors()?;
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let k = self.pick(rng);
            data.extend(self.draw_component(k, &chol[k], rng));
        }
        Tensor::new(data, vec![n, d])
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<MixtureDraw> {
        self.validate()?;
        if n == 0 {
            return invalid("at least one sample is required");
        }
        let chol = self.cholesky_factors()?;
        let d = self.dim();
        let mut out = MixtureDraw {
            samples: Vec::with_capacity(n),
            clean: Vec::with_capacity(n),
            components: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let k = self.pick(rng);
            let x = self.draw_component(k, &chol[k], rng);
            let corrupt = rng.gen::<f64>() < self.corruption_fractions[k];
            let sample = if corrupt {
                let scale = self.risk.draw(rng);
                let noise = NoiseModel::of_kind(self.noise, vec![scale; d])?;
                let eps = noise.sample(rng);
                RiskSample {
                    x0: x.iter().zip(&eps).map(|(a, b)| a + b).collect(),
                    r: vec![scale; d],
                }
            } else {
                RiskSample::clean(x.clone())
            };
            out.samples.push(sample);
            out.clean.push(x);
            out.components.push(k);
        }
        Ok(out)
    }
}

pub fn generate_mixture<R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Result<Vec<RiskSample>> {
    Ok(spec.generate(n, rng)?.samples)
}

/// A numeric table with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<f64>>,
}

impl Table {
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("table rows differ in width");
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            cells: rows.concat(),
        })
    }

    pub fn from_tensor(x: &Tensor) -> Self {
        Self {
            rows: x.rows(),
            cols: x.cols(),
            cells: x.data().iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.cells[i * self.cols..(i + 1) * self.cols]
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularPipelineSpec {
    pub mask_fraction: f64,
    pub neighbors: usize,
}

impl Default for TabularPipelineSpec {
    fn default() -> Self {
        Self {
            mask_fraction: 0.05,
            neighbors: 10,
        }
    }
}

/// Masks each cell independently with probability `fraction`. A row that
/// would lose every observed cell keeps one of them, chosen uniformly.
pub fn mask_table<R: Rng + ?Sized>(table: &Table, fraction: f64, rng: &mut R) -> Result<Table> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid("mask fraction must lie in (0, 1)");
    }
    let mut cells = Vec::with_capacity(table.cells.len());
    for row in table.cells.chunks(table.cols.max(1)) {
        let start = cells.len();
        cells.extend(row.iter().map(|&c| if rng.gen::<f64>() < fraction { None } else { c }));
        let observed: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_some()).collect();
        if !observed.is_empty() && cells[start..].iter().all(Option::is_none) {
            let j = observed[rng.gen_range(0..observed.len())];
            cells[start + j] = row[j];
        }
    }
    Ok(Table { cells, ..*table })
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

/// Fills each missing cell with the median of its `k` nearest donors and
/// sets the cell's risk to their median absolute deviation from it.
///
/// Donor distance is Euclidean over mutually observed columns, scaled by
/// `D / observed`.
pub fn knn_impute_with_risk(table: &Table, spec: &TabularPipelineSpec) -> Result<Vec<RiskSample>> {
    let k = spec.neighbors;
    if k == 0 {
        return invalid("neighbor count must be positive");
    }
    let d = table.cols;
    for j in 0..d {
        if (0..table.rows).all(|i| table.get(i, j).is_none()) {
            return Err(Error::Configuration(format!("column {} has no observed values", j + 1)));
        }
    }
    let mut out = Vec::with_capacity(table.rows);
    for i in 0..table.rows {
        let row = table.row(i);
        if row.iter().all(Option::is_none) {
            return Err(Error::PreconditionViolation(format!("row {} has no observed entries", i + 1)));
        }
        let mut x = vec![0.0; d];
        let mut r = vec![0.0; d];
        for j in 0..d {
            if let Some(v) = row[j] {
                x[j] = v;
                continue;
            }
            let mut donors: Vec<(f64, usize, f64)> = Vec::new();
            for (o, other) in (0..table.rows).map(|o| (o, table.row(o))) {
                let Some(value) = other[j] else { continue };
                if o == i {
                    continue;
                }
                let mut sq = 0.0;
                let mut shared = 0usize;
                for c in 0..d {
                    if let (Some(a), Some(b)) = (row[c], other[c]) {
                        sq += (a - b) * (a - b);
                        shared += 1;
                    }
                }
                if shared > 0 {
                    donors.push((sq * d as f64 / shared as f64, o, value));
                }
            }
            if donors.len() < k {
                return Err(Error::PreconditionViolation(format!(
                    "cell ({}, {}) has {} donors, {k} needed",
                    i + 1,
                    j + 1,
                    donors.len()
                )));
            }
            donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut values: Vec<f64> = donors[..k].iter().map(|t| t.2).collect();
            let m = median(&mut values);
            let mut dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
            x[j] = m;
            r[j] = median(&mut dev);
        }
        out.push(RiskSample { x0: x, r });
    }
    Ok(out)
}

fn header(d: usize, with_risk: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    if with_risk {
        h.extend((1..=d).map(|j| format!("r_{j}")));
    }
    h
}

pub fn write_samples_csv(path: &Path, samples: &[RiskSample]) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.x0.len());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(d, true))?;
    for s in samples {
        let rec: Vec<String> = s.x0.iter().chain(&s.r).map(|v| v.to_string()).collect();
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the rows of an `n x D` tensor with an `x_1..x_D` header.
pub fn write_points_csv(path: &Path, x: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(x.cols(), false))?;
    for i in 0..x.rows() {
        w.write_record(x.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn column_layout(headers: &csv::StringRecord) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut xs = Vec::new();
    let mut rs = Vec::new();
    for (pos, name) in headers.iter().enumerate() {
        let name = name.trim();
        if let Some(j) = name.strip_prefix("x_").and_then(|s| s.parse::<usize>().ok()) {
            xs.push((j, pos));
        } else if let Some(j) = name.strip_prefix("r_").and_then(|s| s.parse::<usize>().ok()) {
            rs.push((j, pos));
        } else {
            return invalid(format!("unexpected column '{name}'"));
        }
    }
    xs.sort();
    rs.sort();
    let d = xs.len();
    if d == 0 || xs.iter().enumerate().any(|(k, &(j, _))| j != k + 1) {
        return invalid("columns must be x_1..x_D");
    }
    if !rs.is_empty() && (rs.len() != d || rs.iter().enumerate().any(|(k, &(j, _))| j != k + 1)) {
        return invalid("risk columns must be r_1..r_D");
    }
    Ok((xs.into_iter().map(|p| p.1).collect(), rs.into_iter().map(|p| p.1).collect()))
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("line {line}: '{s}' is not a number")))
}

/// Reads `x_*` (and optional `r_*`) columns; missing risk means clean.
pub fn read_samples_csv(path: &Path) -> Result<Vec<RiskSample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let (xs, rs) = column_layout(rdr.headers()?)?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let mut x = Vec::with_capacity(xs.len());
        for &p in &xs {
            x.push(parse_cell(&rec[p], line)?.ok_or_else(|| {
                Error::InvalidArgument(format!("line {line}: missing value; run imputation first"))
            })?);
        }
        let r = if rs.is_empty() {
            vec![0.0; x.len()]
        } else {
            rs.iter()
                .map(|&p| parse_cell(&rec[p], line).map(|v| v.unwrap_or(0.0)))
                .collect::<Result<Vec<_>>>()?
        };
        if r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return invalid(format!("line {line}: risk must be finite and nonnegative"));
        }
        out.push(RiskSample { x0: x, r });
    }
    Ok(out)
}

/// Reads the `x_*` columns of a CSV; empty fields are missing cells.
pub fn read_table_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path)?;
    let (xs, _) = column_layout(rdr.headers()?)?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(xs.iter().map(|&p| parse_cell(&rec[p], n + 2)).collect::<Result<Vec<_>>>()?);
    }
    Table::from_rows(&rows)
}

pub fn write_table_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(table.cols, false))?;
    for i in 0..table.rows {
        w.write_record(table.row(i).iter().map(|c| c.map_or(String::new(), |v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_corruption_gives_clean_samples_with_right_weights() {
        let spec = MixtureSpec {
            corruption_fractions: vec![0.0; 4],
            ..MixtureSpec::four_corners(NoiseKind::Gaussian)
        };
        let mut g = ChaCha8Rng::seed_from_u64(0);
        let n = 20_000;
        let draw = spec.generate(n, &mut g).unwrap();
        assert!(draw.samples.iter().all(RiskSample::is_clean));
        for k in 0..4 {
            let c = draw.components.iter().filter(|&&c| c == k).count() as f64;
            let sd = (n as f64 * 0.25 * 0.75).sqrt();
            assert!((c - n as f64 * 0.25).abs() < 3.0 * sd);
        }
        for (s, x) in draw.samples.iter().zip(&draw.clean) {
            assert_eq!(&s.x0, x);
        }
    }

    #[test]
    fn corrupted_count_matches_binomial() {
        let spec = MixtureSpec::four_corners(NoiseKind::Gaussian);
        let mut g = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let s = generate_mixture(&spec, n, &mut g).unwrap();
        let c = s.iter().filter(|s| !s.is_clean()).count() as f64;
        let p = (0.95 + 3.0 * 0.1) / 4.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c - n as f64 * p).abs() < 3.0 * sd, "{c}");
        assert!(s.iter().filter(|s| !s.is_clean()).all(|s| s.r == vec![1.0, 1.0]));
    }

    #[test]
    fn cauchy_corruption_has_heavy_tails() {
        let spec = MixtureSpec::four_corners(NoiseKind::Cauchy);
        let mut g = ChaCha8Rng::seed_from_u64(2);
        let s = generate_mixture(&spec, 5000, &mut g).unwrap();
        let spread = 4.0 + 0.5_f64.sqrt();
        assert!(s.iter().any(|s| s.x0.iter().any(|v| v.abs() > 10.0 * spread)));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = MixtureSpec::four_corners(NoiseKind::Gaussian);
        spec.weights[0] = 0.5;
        assert!(spec.validate().is_err());
        let mut spec = MixtureSpec::four_corners(NoiseKind::Gaussian);
        spec.covariances[1] = vec![1.0, 2.0, 2.0, 1.0];
        assert!(spec.validate().is_err());
        let mut spec = MixtureSpec::four_corners(NoiseKind::Gaussian);
        spec.covariances[1] = vec![1.0, 0.2, 0.1, 1.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hand_computed_imputation() {
        let mut rows: Vec<Vec<Option<f64>>> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .map(|&v| vec![Some(0.0), Some(v)])
            .collect();
        rows.push(vec![Some(0.0), None]);
        let t = Table::from_rows(&rows).unwrap();
        let spec = TabularPipelineSpec { neighbors: 5, ..Default::default() };
        let out = knn_impute_with_risk(&t, &spec).unwrap();
        assert_eq!(out[5].x0, vec![0.0, 3.0]);
        assert_eq!(out[5].r, vec![0.0, 1.0]);
        assert!(out[..5].iter().all(RiskSample::is_clean));
    }

    #[test]
    fn constant_column_imputes_with_zero_risk() {
        let mut rows: Vec<Vec<Option<f64>>> = (0..12).map(|i| vec![Some(i as f64), Some(7.5)]).collect();
        rows[3][1] = None;
        let out = knn_impute_with_risk(&Table::from_rows(&rows).unwrap(), &Default::default()).unwrap();
        assert_eq!(out[3].x0[1], 7.5);
        assert_eq!(out[3].r, vec![0.0, 0.0]);
    }

    #[test]
    fn complete_table_is_unchanged() {
        let rows: Vec<Vec<Option<f64>>> = (0..5).map(|i| vec![Some(i as f64), Some(-1.0)]).collect();
        let out = knn_impute_with_risk(&Table::from_rows(&rows).unwrap(), &Default::default()).unwrap();
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s.x0, vec![i as f64, -1.0]);
            assert!(s.is_clean());
        }
    }

    #[test]
    fn all_missing_column_is_a_configuration_error() {
        let rows: Vec<Vec<Option<f64>>> = (0..5).map(|i| vec![Some(i as f64), None]).collect();
        let r = knn_impute_with_risk(&Table::from_rows(&rows).unwrap(), &Default::default());
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn nearest_donors_are_chosen() {
        // the masked row sits next to rows 0..3, whose second column is 1
        let mut rows: Vec<Vec<Option<f64>>> = (0..3).map(|i| vec![Some(i as f64 * 0.1), Some(1.0)]).collect();
        rows.extend((0..3).map(|i| vec![Some(50.0 + i as f64), Some(9.0)]));
        rows.push(vec![Some(0.05), None]);
        let spec = TabularPipelineSpec { neighbors: 3, ..Default::default() };
        let out = knn_impute_with_risk(&Table::from_rows(&rows).unwrap(), &spec).unwrap();
        assert_eq!(out[6].x0[1], 1.0);
    }

    #[test]
    fn masking_rate_and_determinism() {
        let t = Table::from_tensor(&Tensor::zeros(vec![1000, 10]));
        let a = mask_table(&t, 0.05, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = mask_table(&t, 0.05, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let m = a.missing_count() as f64;
        assert!((m - 500.0).abs() <= 3.0 * (500.0_f64 * 0.95).sqrt());
        let tiny = Table::from_tensor(&Tensor::zeros(vec![1, 2]));
        assert!(mask_table(&tiny, 0.01, &mut ChaCha8Rng::seed_from_u64(4)).is_ok());
        assert!(mask_table(&t, 0.0, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
        let heavy = mask_table(&t, 0.95, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!((0..heavy.rows).all(|i| heavy.row(i).iter().any(Option::is_some)));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = vec![
            RiskSample { x0: vec![0.1, -2.5], r: vec![0.0, 1.25] },
            RiskSample::clean(vec![3.0, 1e-17]),
        ];
        write_samples_csv(&p, &s).unwrap();
        assert_eq!(read_samples_csv(&p).unwrap(), s);

        let t = Table::from_rows(&[vec![Some(1.0), None], vec![None, Some(2.0)]]).unwrap();
        let q = dir.path().join("t.csv");
        write_table_csv(&q, &t).unwrap();
        assert_eq!(read_table_csv(&q).unwrap(), t);
    }
}
