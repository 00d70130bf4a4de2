//! End-to-end runs: data, training for each method, sampling, metrics,
//! plots and a manifest, all derived from one config and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    split_augmented, train_classifier_free, train_risk_regressor, train_risk_variable, train_standard, Guidance,
    GuidanceRule, Method, RiskRegressor,
};
use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::config::ExperimentConfig;
use crate::datagen::{
    generate_mixture, knn_impute_with_risk, mask_table, read_samples_csv, read_table_csv, stack_x, write_points_csv,
    write_samples_csv, MixtureSpec, RiskSample,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::nn::ScoreModel;
use crate::noise::{Deduction, NoiseKind, NoiseModel};
use crate::sampling::{reverse_sample, SamplerConfig};
use crate::score::{data_scale, ScoreNetwork};
use crate::sde::{SdeSpec, StabilityInterval};
use crate::stability::{instability, null_threshold, ProbeGrid, ProbeOptions};
use crate::svg;
use crate::tensor::Tensor;
use crate::training::{train, TrainingTrace};

/// Independent RNG stream `k` under the run seed.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

const DATA_STREAM: u64 = 0;
const REFERENCE_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const REGRESSOR_STREAM: u64 = 3;
const SCAN_STREAM: u64 = 4;
const IMPUTE_STREAM: u64 = 5;

/// Training data as configured: mixture draws, a CSV, or an imputed table.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Vec<RiskSample>> {
    let data = match (&cfg.data.csv, &cfg.data.impute) {
        (Some(path), Some(pipe)) => {
            let table = read_table_csv(path)?;
            let masked = mask_table(&table, pipe.mask_fraction, &mut stream(cfg.seed, IMPUTE_STREAM))?;
            knn_impute_with_risk(&masked, pipe)?
        }
        (Some(path), None) => read_samples_csv(path)?,
        (None, _) => {
            let mix = cfg.mixture().ok_or_else(|| Error::Configuration("no data source".into()))?;
            generate_mixture(&mix, cfg.data.n, &mut stream(cfg.seed, DATA_STREAM))?
        }
    };
    if data.is_empty() {
        return Err(Error::Configuration("training data is empty".into()));
    }
    if data[0].x0.len() != cfg.sde.dim {
        return Err(Error::Configuration(format!(
            "[sde] dim {} differs from the data dimension {}",
            cfg.sde.dim,
            data[0].x0.len()
        )));
    }
    Ok(data)
}

/// Clean reference set: mixture draws, or the risk-free rows of the data.
pub fn reference_set(cfg: &ExperimentConfig, data: &[RiskSample]) -> Result<Tensor> {
    match cfg.mixture() {
        Some(m) => m.sample_clean(cfg.eval.reference_count, &mut stream(cfg.seed, REFERENCE_STREAM)),
        None => {
            let clean: Vec<RiskSample> = data.iter().filter(|s| s.is_clean()).cloned().collect();
            if clean.len() < cfg.sde.dim + 1 {
                return Err(Error::Configuration("too few clean rows to serve as a reference".into()));
            }
            stack_x(&clean)
        }
    }
}

fn network(cfg: &ExperimentConfig, dim: usize, cond: usize, scale: f64, seed: u64) -> Result<ScoreNetwork> {
    let model = ScoreModel::new(&cfg.model.config(dim, cond), &mut stream(seed, INIT_STREAM))?;
    let spec = SdeSpec { dim, ..cfg.sde.clone() };
    ScoreNetwork::new(model, spec, scale)
}

/// Trains one method; every method starts from the same initialization
/// stream and training seed so comparisons are paired.
pub fn train_method(cfg: &ExperimentConfig, method: Method, data: &[RiskSample]) -> Result<(Checkpoint, TrainingTrace)> {
    let d = cfg.sde.dim;
    let tc = cfg.train.config(cfg.seed);
    let scale = data_scale(&stack_x(data)?);
    let (model, trace) = match method {
        Method::Standard | Method::RiskSensitive => {
            let mut net = network(cfg, d, 0, scale, cfg.seed)?;
            let trace = if method == Method::Standard {
                train_standard(&mut net, data, &tc)?
            } else {
                train(&mut net, data, cfg.noise.kind, &tc)?
            };
            (TrainedModel::Score { network: net }, trace)
        }
        Method::RiskVariable => {
            let mut net = network(cfg, 2 * d, 0, scale, cfg.seed)?;
            let trace = train_risk_variable(&mut net, data, &tc)?;
            let rule = GuidanceRule::new(Guidance::RiskVariable { joint: net }, cfg.sample.gamma)?;
            (TrainedModel::Guided { rule }, trace)
        }
        Method::ClassifierFree => {
            let mut net = network(cfg, d, d + 1, scale, cfg.seed)?;
            let trace = train_classifier_free(&mut net, data, cfg.train.mask_prob, &tc)?;
            let rule = GuidanceRule::new(Guidance::ClassifierFree { conditional: net }, cfg.sample.gamma)?;
            (TrainedModel::Guided { rule }, trace)
        }
        Method::RiskRegressor => {
            let mut net = network(cfg, d, 0, scale, cfg.seed)?;
            let trace = train_standard(&mut net, data, &tc)?;
            let mut reg = RiskRegressor::new(
                &cfg.model.config(d, 0),
                cfg.sde.clone(),
                scale,
                &mut stream(cfg.seed, REGRESSOR_STREAM),
            )?;
            train_risk_regressor(&mut reg, data, &tc)?;
            let rule = GuidanceRule::new(Guidance::RiskRegressor { score: net, regressor: reg }, cfg.sample.gamma)?;
            (TrainedModel::Guided { rule }, trace)
        }
    };
    let final_loss = trace.moving_average(trace.losses.len().clamp(1, 100)).last().copied();
    Ok((
        Checkpoint {
            method,
            model,
            data_dim: d,
            final_loss,
        },
        trace,
    ))
}

/// Generates `n` samples and keeps the data block.
pub fn sample_checkpoint(ckpt: &Checkpoint, config: &SamplerConfig, n: usize) -> Result<Tensor> {
    let spec = ckpt.model.spec().clone();
    let z = reverse_sample(&ckpt.model, &spec, config, n)?;
    if z.cols() == ckpt.data_dim {
        Ok(z)
    } else if z.cols() == 2 * ckpt.data_dim {
        Ok(split_augmented(&z)?.0)
    } else {
        Err(Error::Checkpoint("model width does not match the recorded data dimension".into()))
    }
}

pub fn write_trace_csv(path: &Path, trace: &TrainingTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "mean_t"])?;
    for (i, (l, t)) in trace.losses.iter().zip(&trace.times).enumerate() {
        w.write_record([i.to_string(), l.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Options that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// `0` reads the thread count from the environment.
    pub threads: usize,
}

/// Full pipeline. Returns the per-method metrics written to `metrics.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<BTreeMap<String, EvalReport>> {
    cfg.validate()?;
    for sub in ["checkpoints", "losses", "samples", "plots"] {
        fs::create_dir_all(out.join(sub))?;
    }
    let config_text = cfg.to_toml()?;
    fs::write(out.join("config.toml"), &config_text)?;
    let mixture = cfg.mixture();

    let data = load_data(cfg)?;
    write_samples_csv(&out.join("data.csv"), &data)?;
    let reference = reference_set(cfg, &data)?;
    write_points_csv(&out.join("reference.csv"), &reference)?;
    fs::write(
        out.join("plots/data.svg"),
        svg::scatter(&stack_x(&data)?, mixture.as_ref(), "training data"),
    )?;

    let sampler = SamplerConfig {
        steps: cfg.sample.steps,
        seed: cfg.seed,
        threads: opts.threads,
        ..Default::default()
    };
    let mut reports = BTreeMap::new();
    for &method in &cfg.train.methods {
        let name = method.name();
        let (ckpt, trace) = train_method(cfg, method, &data)?;
        ckpt.save(&out.join(format!("checkpoints/{name}.ckpt")))?;
        write_trace_csv(&out.join(format!("losses/{name}.csv")), &trace)?;
        let samples = sample_checkpoint(&ckpt, &sampler, cfg.sample.count)?;
        write_points_csv(&out.join(format!("samples/{name}.csv")), &samples)?;
        fs::write(
            out.join(format!("plots/{name}.svg")),
            svg::scatter(&samples, mixture.as_ref(), name),
        )?;
        let prd = crate::metrics::PrdOptions { seed: cfg.seed, ..cfg.eval.prd };
        reports.insert(name.to_string(), evaluate(&samples, &reference, mixture.as_ref(), &prd)?);
    }
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&reports)?)?;

    let mut files = BTreeMap::new();
    collect_hashes(out, out, &mut files)?;
    let manifest = Manifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: cfg.seed,
        files,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(reports)
}

fn collect_hashes(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_hashes(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_hex(&fs::read(&p)?));
        }
    }
    Ok(())
}

/// Stability interval for a uniform risk level under the configured law.
pub fn interval_for(spec: &SdeSpec, kind: NoiseKind, risk: f64) -> Result<StabilityInterval> {
    let noise = NoiseModel::of_kind(kind, vec![risk; spec.dim])?;
    Deduction::new(&noise)?.stability_interval(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub risk: f64,
    pub t_star: Option<f64>,
    pub length: f64,
}

pub fn interval_table(cfg: &ExperimentConfig) -> Result<Vec<IntervalRow>> {
    cfg.stability
        .risks
        .iter()
        .map(|&risk| {
            let iv = interval_for(&cfg.sde, cfg.noise.kind, risk)?;
            Ok(IntervalRow {
                risk,
                t_star: iv.t_star,
                length: iv.length(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t: f64,
    /// Risky samples under the risk-sensitive kernel against clean ones.
    pub instability: f64,
    /// Same, with the unadjusted clean kernel applied to risky samples.
    pub unadjusted: f64,
    /// Upper null quantile between random halves of clean samples.
    pub threshold: f64,
    pub in_interval: bool,
}

fn push_forward(x0: &Tensor, u: &[f64], v: &[f64], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let d = x0.cols();
    let mut out = x0.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        for j in 0..d {
            let e: f64 = StandardNormal.sample(rng);
            row[j] = u[j] * row[j] + v[j] * e;
        }
    }
    Ok(out)
}

/// Empirical instability over `times` for corrupted mixture samples at
/// risk `scan_risk` on every coordinate.
pub fn instability_scan(cfg: &ExperimentConfig) -> Result<Vec<ScanRow>> {
    let mix = cfg
        .mixture()
        .ok_or_else(|| Error::Configuration("instability scan needs a mixture data source".into()))?;
    let d = cfg.sde.dim;
    let n = cfg.stability.samples;
    let mut rng = stream(cfg.seed, SCAN_STREAM);
    let noise = NoiseModel::of_kind(cfg.noise.kind, vec![cfg.stability.scan_risk; d])?;
    let deduction = Deduction::new(&noise)?;
    let interval = deduction.stability_interval(&cfg.sde)?;
    let mut rows = Vec::with_capacity(cfg.stability.times.len());
    for &t in &cfg.stability.times {
        let (u0, v0_sq) = cfg.sde.base_schedules(t)?;
        let coeffs = deduction.coefficients(&cfg.sde, t)?;
        let clean0 = mix.sample_clean(2 * n, &mut rng)?;
        let mut risky0 = mix.sample_clean(n, &mut rng)?;
        for row in risky0.data_mut().chunks_exact_mut(d) {
            for (x, e) in row.iter_mut().zip(noise.sample(&mut rng)) {
                *x += e;
            }
        }
        let base_u = vec![u0; d];
        let base_v = vec![v0_sq.sqrt(); d];
        let pool = push_forward(&clean0, &base_u, &base_v, &mut rng)?;
        let clean_half = push_forward(&mix.sample_clean(n, &mut rng)?, &base_u, &base_v, &mut rng)?;
        let risky = push_forward(&risky0, &coeffs.u, &coeffs.v, &mut rng)?;
        let naive = push_forward(&risky0, &base_u, &base_v, &mut rng)?;
        let grid = ProbeGrid::from_samples(&pool, &ProbeOptions::default(), &mut rng)?;
        let floor = ProbeOptions::default().modulus_floor;
        rows.push(ScanRow {
            t,
            instability: instability(&risky, &clean_half, &grid, floor)?,
            unadjusted: instability(&naive, &clean_half, &grid, floor)?,
            threshold: null_threshold(&pool, &grid, cfg.stability.null_repetitions, cfg.stability.null_quantile, floor, &mut rng)?,
            in_interval: interval.contains(t),
        });
    }
    Ok(rows)
}

pub fn write_scan_csv(path: &Path, rows: &[ScanRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "instability", "unadjusted", "threshold", "in_interval"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.instability.to_string(),
            r.unadjusted.to_string(),
            r.threshold.to_string(),
            r.in_interval.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `intervals.csv`, `instability.csv` and their plots into `out`.
pub fn stability_report(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<IntervalRow>, Vec<ScanRow>)> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let table = interval_table(cfg)?;
    let mut w = csv::Writer::from_path(out.join("intervals.csv"))?;
    w.write_record(["risk", "t_star", "interval_length"])?;
    for r in &table {
        w.write_record([
            r.risk.to_string(),
            r.t_star.map(|t| t.to_string()).unwrap_or_default(),
            r.length.to_string(),
        ])?;
    }
    w.flush()?;
    let pts: Vec<(f64, f64)> = table.iter().filter_map(|r| r.t_star.map(|t| (r.risk, t))).collect();
    fs::write(out.join("intervals.svg"), svg::lines(&[("t_star", pts)], "stability interval start vs risk"))?;

    let scan = if cfg.mixture().is_some() { instability_scan(cfg)? } else { Vec::new() };
    if !scan.is_empty() {
        write_scan_csv(&out.join("instability.csv"), &scan)?;
        let series = [
            ("risk-sensitive", scan.iter().map(|r| (r.t, r.instability.max(1e-12).log10())).collect()),
            ("unadjusted", scan.iter().map(|r| (r.t, r.unadjusted.max(1e-12).log10())).collect()),
            ("null 95%", scan.iter().map(|r| (r.t, r.threshold.max(1e-12).log10())).collect()),
        ];
        fs::write(out.join("instability.svg"), svg::lines(&series, "log10 instability vs t"))?;
    }
    Ok((table, scan))
}

/// Samples from the configured mixture, for the `generate-data` command.
pub fn generate(mix: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<RiskSample>> {
    generate_mixture(mix, n, &mut stream(seed, DATA_STREAM))
}
