use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::RoutingMode;
use crate::error::{config_err, Result};
use crate::task::CANONICAL_EXPERT_COUNT;

/// Shape and initialization of the denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    pub d_model: usize,
    /// Attention width `d`.
    pub d_attn: usize,
    /// Task-embedding width `N`; also the width of visual-prompt tokens.
    pub task_width: usize,
    pub experts: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    /// Tokens produced by the visual-prompt projector.
    pub visual_tokens: usize,
    /// Reference images are average-pooled to a `ref_pool x ref_pool` grid.
    pub ref_pool: usize,
    pub time_features: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub router_gain: f64,
    pub router_temperature: f64,
    pub routing: RoutingMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
            patch: 4,
            d_model: 32,
            d_attn: 32,
            task_width: 32,
            experts: CANONICAL_EXPERT_COUNT,
            blocks: 1,
            mlp_hidden: 64,
            visual_tokens: 2,
            ref_pool: 2,
            time_features: 16,
            diffusion_steps: 20,
            beta_start: 0.02,
            beta_end: 0.35,
            router_gain: 4.0,
            router_temperature: 1.0,
            routing: RoutingMode::Soft,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A smaller configuration for gradient checks.
    pub fn tiny() -> Self {
        Self {
            height: 8,
            width: 8,
            patch: 4,
            d_model: 8,
            d_attn: 8,
            task_width: 12,
            mlp_hidden: 8,
            visual_tokens: 1,
            time_features: 4,
            diffusion_steps: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("patch", self.patch),
            ("d_model", self.d_model),
            ("d_attn", self.d_attn),
            ("task_width", self.task_width),
            ("experts", self.experts),
            ("blocks", self.blocks),
            ("mlp_hidden", self.mlp_hidden),
            ("visual_tokens", self.visual_tokens),
            ("ref_pool", self.ref_pool),
            ("time_features", self.time_features),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err!("{name} must be at least 1"));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(config_err!(
                "patch size {} does not divide {}x{}",
                self.patch,
                self.height,
                self.width
            ));
        }
        if self.ref_pool > self.height.min(self.width) {
            return Err(config_err!("ref_pool {} exceeds the image size", self.ref_pool));
        }
        if self.task_width < self.experts {
            return Err(config_err!(
                "task_width {} must be at least the expert count {}",
                self.task_width,
                self.experts
            ));
        }
        if !(self.router_gain.is_finite() && self.router_gain > 0.0) {
            return Err(config_err!("router_gain must be positive"));
        }
        crate::diffusion::make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)?;
        if !(self.router_temperature > 0.0 && self.router_temperature.is_finite()) {
            return Err(config_err!("router_temperature must be positive"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn reference_features(&self) -> usize {
        self.ref_pool * self.ref_pool * self.channels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
