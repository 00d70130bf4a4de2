//! Trained-model files: a magic line followed by one JSON document.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{GuidanceRule, Method};
use crate::error::{Error, Result};
use crate::sampling::ScoreFn;
use crate::score::ScoreNetwork;
use crate::sde::SdeSpec;
use crate::tensor::Tensor;

pub const MAGIC: &str = "RSDE-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TrainedModel {
    Score { network: ScoreNetwork },
    Guided { rule: GuidanceRule },
}

impl TrainedModel {
    pub fn spec(&self) -> &SdeSpec {
        match self {
            TrainedModel::Score { network } => &network.spec,
            TrainedModel::Guided { rule } => rule.spec(),
        }
    }

    /// Replaces the guidance scale; no-op for plain score models.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if let TrainedModel::Guided { rule } = self {
            self = TrainedModel::Guided {
                rule: GuidanceRule::new(rule.guidance, gamma)?,
            };
        }
        Ok(self)
    }
}

impl ScoreFn for TrainedModel {
    fn dim(&self) -> usize {
        match self {
            TrainedModel::Score { network } => ScoreFn::dim(network),
            TrainedModel::Guided { rule } => rule.dim(),
        }
    }

    fn score_batch(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        match self {
            TrainedModel::Score { network } => ScoreFn::score_batch(network, x, t),
            TrainedModel::Guided { rule } => rule.score_batch(x, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub method: Method,
    pub model: TrainedModel,
    /// Data dimension of generated samples (half the model width for the
    /// risk-variable method).
    pub data_dim: usize,
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        writeln!(f, "{MAGIC}")?;
        serde_json::to_writer(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let (head, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated file", path.display())))?;
        if head.trim_end() != MAGIC {
            return Err(Error::Checkpoint(format!("{}: not a checkpoint (bad header)", path.display())));
        }
        serde_json::from_str(body).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
