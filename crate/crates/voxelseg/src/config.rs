//! One configuration object for the whole pipeline, shared by the CLI and
//! the end-to-end tests. Loadable from JSON with every field defaulted, so a
//! config file only states what it overrides; the resolved config is echoed
//! next to outputs for provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::EmOptions;
use crate::error::{Error, Result};
use crate::features::FeatureOpts;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub features: FeatureOpts,
    pub em: EmOptions,
    /// Master seed for clustering and training; `resolve` copies it into
    /// `train.seed` so one number reproduces a whole run.
    pub seed: u64,
    /// Worker-thread cap; None uses all cores.
    pub threads: Option<usize>,
    /// Directory of externally computed per-view feature maps (one
    /// `<view>.rfpfeat` per view); when present it replaces the builtin
    /// extractor in bootstrap and refinement.
    pub external_features: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            features: FeatureOpts::default(),
            em: EmOptions::default(),
            seed: 0,
            threads: None,
            external_features: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Propagates the master seed and checks every field against the module
    /// invariants before any work starts.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.features.spatial_weight.is_finite() && self.features.spatial_weight >= 0.0) {
            return Err(Error::Config("features.spatial_weight must be finite and >= 0".into()));
        }
        if !(self.features.blur_sigma.is_finite() && self.features.blur_sigma > 0.0) {
            return Err(Error::Config("features.blur_sigma must be positive".into()));
        }
        if self.em.weight.is_nan() || self.em.weight < 0.0 {
            return Err(Error::Config("em.weight must be >= 0 (or inf)".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1 when set".into()));
        }
        Ok(())
    }
}
