//! TOML experiment configuration with strict parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{Method, DEFAULT_GUIDANCE, DEFAULT_MASK_PROB};
use crate::datagen::{MixtureSpec, TabularPipelineSpec};
use crate::error::{Error, Result};
use crate::metrics::PrdOptions;
use crate::nn::{Activation, ModelConfig};
use crate::noise::NoiseKind;
use crate::sampling::SamplerConfig;
use crate::sde::SdeSpec;
use crate::training::{LossWeighting, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Corruption law assumed by the risk-sensitive coefficients.
    pub kind: NoiseKind,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { kind: NoiseKind::Gaussian }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub time_frequencies: usize,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        Self {
            hidden: m.hidden,
            time_frequencies: m.time_frequencies,
            activation: m.activation,
        }
    }
}

impl ModelSection {
    pub fn config(&self, data_dim: usize, cond_dim: usize) -> ModelConfig {
        ModelConfig {
            data_dim,
            hidden: self.hidden.clone(),
            time_frequencies: self.time_frequencies,
            cond_dim,
            activation: self.activation,
        }
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weighting: LossWeighting,
    pub p_force: f64,
    pub v_floor: f64,
    pub grad_clip: Option<f64>,
    /// Mask probability for the classifier-free baseline.
    pub mask_prob: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            methods: all_methods(),
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weighting: t.weighting,
            p_force: t.p_force,
            v_floor: t.v_floor,
            grad_clip: t.grad_clip,
            mask_prob: DEFAULT_MASK_PROB,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weighting: self.weighting,
            p_force: self.p_force,
            v_floor: self.v_floor,
            grad_clip: self.grad_clip,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub count: usize,
    /// Number of time points `M`.
    pub steps: usize,
    pub gamma: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            count: 5000,
            steps: SamplerConfig::default().steps,
            gamma: DEFAULT_GUIDANCE,
        }
    }
}

/// Where training data comes from. Without a CSV the mixture is used,
/// defaulting to the four-corner benchmark under the `[noise]` law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: usize,
    pub csv: Option<PathBuf>,
    pub mixture: Option<MixtureSpec>,
    /// Mask-and-impute the CSV before training.
    pub impute: Option<TabularPipelineSpec>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 10_000,
            csv: None,
            mixture: None,
            impute: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Clean reference draws for mixture data.
    pub reference_count: usize,
    pub prd: PrdOptions,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            reference_count: 5000,
            prd: PrdOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub risks: Vec<f64>,
    pub times: Vec<f64>,
    /// Risk applied to every coordinate in the instability scan.
    pub scan_risk: f64,
    pub samples: usize,
    pub null_repetitions: usize,
    /// Upper quantile of the bootstrap null used as the detection threshold.
    pub null_quantile: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            risks: vec![0.0, 0.5, 1.0, 2.0],
            times: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            scan_risk: 1.0,
            samples: 20_000,
            null_repetitions: 20,
            null_quantile: 0.95,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/experiment")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub sde: SdeSpec,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub stability: StabilitySection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        Ok(cfg)
    }

    /// Parses and validates; relative data paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Configuration(m) => Error::Configuration(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(csv) = &cfg.data.csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.csv = Some(base.join(csv));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Configuration(e.to_string()))
    }

    /// Mixture used for generation and evaluation, if the data is synthetic.
    pub fn mixture(&self) -> Option<MixtureSpec> {
        if self.data.csv.is_some() {
            return self.data.mixture.clone();
        }
        Some(
            self.data
                .mixture
                .clone()
                .unwrap_or_else(|| MixtureSpec::four_corners(self.noise.kind)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Configuration(m));
        self.sde.validate().or_else(|e| cfg(format!("[sde] {e}")))?;
        self.train.config(0).validate().or_else(|e| cfg(format!("[train] {e}")))?;
        if self.train.methods.is_empty() {
            return cfg("[train] methods must not be empty".into());
        }
        if !(self.train.mask_prob > 0.0 && self.train.mask_prob < 1.0) {
            return cfg("[train] mask_prob must lie in (0, 1)".into());
        }
        if self.sample.count == 0 || self.sample.steps == 0 {
            return cfg("[sample] count and steps must be positive".into());
        }
        if !(self.sample.gamma >= 0.0) {
            return cfg("[sample] gamma must be nonnegative".into());
        }
        if let Some(csv) = &self.data.csv {
            if !csv.exists() {
                return cfg(format!("[data] csv file {} does not exist", csv.display()));
            }
        } else if self.data.n == 0 {
            return cfg("[data] n must be positive".into());
        }
        if let Some(m) = self.mixture() {
            m.validate().or_else(|e| cfg(format!("[data.mixture] {e}")))?;
            if m.dim() != self.sde.dim {
                return cfg(format!("[sde] dim {} differs from the mixture dimension {}", self.sde.dim, m.dim()));
            }
        }
        if let Some(p) = &self.data.impute {
            if !(p.mask_fraction > 0.0 && p.mask_fraction < 1.0) || p.neighbors == 0 {
                return cfg("[data.impute] needs mask_fraction in (0, 1) and neighbors >= 1".into());
            }
        }
        if self.stability.risks.iter().any(|r| !(*r >= 0.0)) || !(self.stability.scan_risk >= 0.0) {
            return cfg("[stability] risks must be nonnegative".into());
        }
        if self.stability.samples < 4 || self.stability.null_repetitions == 0 {
            return cfg("[stability] needs samples >= 4 and null_repetitions >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.stability.null_quantile) {
            return cfg("[stability] null_quantile must lie in [0, 1]".into());
        }
        Ok(())
    }
}
