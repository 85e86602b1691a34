use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamConfig;
use crate::ccm::CcmConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{FusionOptions, ModelConfig};
use crate::rcm::RcmConfig;

/// Which optional modules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_rcm: bool,
    pub use_ccm: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_rcm: true,
            use_ccm: true,
        }
    }
}

/// Which segmentation output becomes the predicted mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictionHead {
    /// The full-depth output `s₄`.
    #[default]
    Deepest,
    /// Mean plaque probability of all four outputs.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Train / validation / test fractions.
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            split_ratios: [0.6, 0.2, 0.2],
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives mini-batch shuffling.
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub ablation: AblationFlags,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub rcm: RcmConfig,
    pub ccm: CcmConfig,
    pub prediction: PredictionHead,
    pub data: DataConfig,
    /// Validation snapshot period in epochs; 0 disables snapshots.
    pub eval_every: usize,
    /// Where periodic checkpoints go; none when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint period in epochs; 0 keeps only the final state.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 10,
            seed: 0,
            optimizer: AdamConfig::default(),
            ablation: AblationFlags::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            rcm: RcmConfig::default(),
            ccm: CcmConfig::default(),
            prediction: PredictionHead::default(),
            data: DataConfig::default(),
            eval_every: 1,
            checkpoint_dir: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.rcm.alpha.validate()?;
        self.ccm.validate()?;
        let r = self.data.split_ratios;
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split_ratios {r:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionOptions {
        FusionOptions {
            use_rcm: self.ablation.use_rcm,
            rcm: self.rcm,
        }
    }

    /// Parses TOML, or JSON when the file ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Short SHA-256 digest of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
