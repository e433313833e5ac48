//! The run configuration document shared by every command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::GuidanceScales;
use crate::error::{config_err, Result};
use crate::filter::FilterThresholds;
use crate::instruct::SamplingSettings;
use crate::mask::MaskParams;
use crate::model::{ModelConfig, TrainConfig};

/// Service base URLs. An environment variable of the same service takes
/// precedence over the value here.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderUrls {
    pub textgen: Option<String>,
    pub embed: Option<String>,
    pub embed2: Option<String>,
    pub detect: Option<String>,
    pub vlm: Option<String>,
    pub imageop: Option<String>,
}

/// Default file locations; command-line flags override them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// In-context example pool; the bundled seed pool when absent.
    pub pool: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core. Does not affect results.
    pub workers: usize,
    /// Side length of synthesized toy images.
    pub image_size: usize,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub thresholds: FilterThresholds,
    pub mask: MaskParams,
    pub sampling: SamplingSettings,
    pub guidance: GuidanceScales,
    pub providers: ProviderUrls,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            image_size: 16,
            model: ModelConfig::default(),
            stage1: TrainConfig::default(),
            stage2: TrainConfig::default(),
            thresholds: FilterThresholds::default(),
            mask: MaskParams::default(),
            sampling: SamplingSettings::default(),
            guidance: GuidanceScales::default(),
            providers: ProviderUrls::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a JSON document. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err!("run config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 4 {
            return Err(config_err!("image_size must be at least 4"));
        }
        self.model.validate()?;
        if self.model.height != self.image_size || self.model.width != self.image_size {
            return Err(config_err!(
                "model is {}x{} but image_size is {}; set model.height and model.width to match",
                self.model.height,
                self.model.width,
                self.image_size
            ));
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.thresholds.validate()?;
        if !(self.mask.reference_size > 0.0 && self.mask.radius_px >= 0.0 && self.mask.sigma_px >= 0.0) {
            return Err(config_err!("mask radius and sigma must be non-negative, reference size positive"));
        }
        if !(0.0..=1.0).contains(&self.mask.global_strength) {
            return Err(config_err!("mask global_strength must lie in [0, 1]"));
        }
        if !(self.sampling.temperature >= 0.0 && self.sampling.temperature.is_finite()) {
            return Err(config_err!("sampling temperature must be non-negative"));
        }
        Ok(())
    }

    /// Hex SHA-256 over every setting that can change results. Paths and
    /// the worker count are left out.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.paths = Paths::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
