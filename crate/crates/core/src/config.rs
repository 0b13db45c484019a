//! Run configuration: one struct covering encoders, fusion, enhancement
//! steps, optimizer and seeds. Loaded from TOML; CLI flags override
//! individual keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhance::{validate_steps, EnhancementStep};
use crate::fusion::FusionVariant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    Toy,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Toy-backend hash seed.
    pub seed: u64,
    /// Toy-backend feature width.
    pub dim: usize,
    /// Toy-backend patch count per image.
    pub patches: usize,
    /// Pretrained identifiers, recorded for provenance and checked against
    /// the feature archive.
    pub vision_id: Option<String>,
    pub text_id: Option<String>,
    /// Feature-archive directory for the pretrained variant.
    pub archive: Option<PathBuf>,
    pub max_text_tokens: usize,
    pub max_enhanced_tokens: usize,
    /// Reserved for parametric backbones; toy/archive backends reject it.
    pub unfreeze: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::Toy,
            seed: 0,
            dim: 32,
            patches: 16,
            vision_id: None,
            text_id: None,
            archive: None,
            max_text_tokens: 64,
            max_enhanced_tokens: 128,
            unfreeze: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    /// Enabled steps: a subset of the chain, or exactly \[DIRECT\].
    pub steps: Vec<EnhancementStep>,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            steps: EnhancementStep::CHAIN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub variant: FusionVariant,
    /// Per-head key width; 0 means d / heads.
    pub d_k: usize,
    pub heads: usize,
    /// For the no-dual-stage ablation: keep stage-1 while dropping stage-2.
    pub no_dualstage_keep_stage1: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            variant: FusionVariant::BidirectionalXattn,
            d_k: 0,
            heads: 1,
            no_dualstage_keep_stage1: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: String,
    /// Absent: 2e-4 for toy encoders, 2e-5 for pretrained.
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stop patience on validation macro-F1; 0 disables early stop.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: "adamw".into(),
            lr: None,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 30,
            patience: 5,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub seeds: Vec<u64>,
    /// Optional BCP-47 filter; instances tagged otherwise are excluded.
    pub language: Option<String>,
    pub encoder: EncoderConfig,
    pub enhance: EnhanceConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            out_dir: PathBuf::from("runs/out"),
            precision: Precision::F32,
            seeds: vec![0, 1, 2, 3, 4],
            language: None,
            encoder: EncoderConfig::default(),
            enhance: EnhanceConfig::default(),
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&raw)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seed list is empty".into()));
        }
        validate_steps(&self.enhance.steps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.train.optimizer != "adamw" {
            return Err(ConfigError::Invalid(format!(
                "unknown optimizer `{}` (supported: adamw)",
                self.train.optimizer
            )));
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(ConfigError::Invalid(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.fusion.heads == 0 {
            return Err(ConfigError::Invalid("fusion.heads must be ≥ 1".into()));
        }
        if self.encoder.unfreeze {
            return Err(ConfigError::Invalid(format!(
                "encoder.unfreeze is set, but the `{}` backend has no backbone parameters to unfreeze",
                match self.encoder.variant {
                    EncoderVariant::Toy => "toy",
                    EncoderVariant::Pretrained => "pretrained (feature archive)",
                }
            )));
        }
        match self.encoder.variant {
            EncoderVariant::Toy => {
                if self.encoder.dim == 0 || self.encoder.patches == 0 {
                    return Err(ConfigError::Invalid(
                        "toy encoder dim and patches must be positive".into(),
                    ));
                }
                if self.fusion.d_k == 0 && !self.encoder.dim.is_multiple_of(self.fusion.heads) {
                    return Err(ConfigError::Invalid(format!(
                        "encoder.dim {} is not divisible by fusion.heads {}",
                        self.encoder.dim, self.fusion.heads
                    )));
                }
            }
            EncoderVariant::Pretrained => {
                if self.encoder.archive.is_none() {
                    return Err(ConfigError::Invalid(
                        "pretrained encoder requires encoder.archive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Learning rate, defaulted by encoder variant.
    pub fn effective_lr(&self) -> f64 {
        self.train.lr.unwrap_or(match self.encoder.variant {
            EncoderVariant::Toy => 2e-4,
            EncoderVariant::Pretrained => 2e-5,
        })
    }

    /// Per-head key width, defaulted to d / heads.
    pub fn effective_d_k(&self, d: usize) -> usize {
        if self.fusion.d_k > 0 {
            self.fusion.d_k
        } else {
            d / self.fusion.heads
        }
    }
}
