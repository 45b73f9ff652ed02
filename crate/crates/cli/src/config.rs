//! Run configuration: one JSON file merging the per-module configs, every
//! field defaulted, unknown keys rejected before any work starts.

use serde::{Deserialize, Serialize};

use idc_core::codec::CodecConfig;
use idc_core::diffusion::ScheduleConfig;
use idc_core::model::ModelConfig;
use idc_core::scenes::{Primitive, SceneSpec, TrajectoryKind};
use idc_core::training::{DatasetSpec, TrainConfig, TrainSetup, TrajectorySpec};
use idc_core::{Error, Result};

/// Architecture knobs exposed in the config file; latent shapes are derived
/// from the dataset, codec, and clip length rather than hand-entered.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArch {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub patch: usize,
    pub t_embed_dim: usize,
    pub camera_token_patch: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelArch {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            patch: m.patch,
            t_embed_dim: m.t_embed_dim,
            camera_token_patch: m.camera_token_patch,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub codec: CodecConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelArch,
    pub training: TrainConfig,
    pub dataset: DatasetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            codec: CodecConfig::default(),
            schedule: ScheduleConfig::default(),
            model: ModelArch::default(),
            training: TrainConfig::default(),
            dataset: default_dataset(),
        }
    }
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec {
        scenes: vec![SceneSpec {
            primitives: vec![
                Primitive::Plane {
                    point: [0.0, 0.0, 6.0],
                    normal: [0.0, 0.0, 1.0],
                    albedo: [0.8, 0.6, 0.3],
                    checker: Some(0.8),
                },
                Primitive::Sphere {
                    center: [0.4, -0.2, 3.5],
                    radius: 0.8,
                    albedo: [0.2, 0.5, 0.9],
                    checker: None,
                },
            ],
        }],
        trajectories: vec![TrajectorySpec { kind: TrajectoryKind::Forward, frames: 13, step: 0.15 }],
        image_width: 48,
        image_height: 32,
        focal: 40.0,
        depth_divisor: None,
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.training.validate()?;
        self.resolved_model()?.validate()
    }

    /// Fills the latent-shape fields of the model config from the dataset,
    /// codec, and clip length.
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        let r_t = self.codec.r_t;
        let r_s = self.codec.r_s;
        let clip = self.training.clip_frames;
        if clip == 0 || (clip - 1) % r_t != 0 {
            return Err(Error::InvalidConfig(format!(
                "clip_frames {clip} must satisfy f ≡ 1 (mod r_t = {r_t})"
            )));
        }
        if self.dataset.image_height % r_s != 0 || self.dataset.image_width % r_s != 0 {
            return Err(Error::InvalidConfig(format!(
                "image {}x{} must be divisible by r_s = {r_s}",
                self.dataset.image_height, self.dataset.image_width
            )));
        }
        let per_modality = 3 * r_s * r_s * r_t;
        Ok(ModelConfig {
            d_model: self.model.d_model,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            patch: self.model.patch,
            t_embed_dim: self.model.t_embed_dim,
            camera_token_patch: self.model.camera_token_patch,
            camera_temporal_group: r_t,
            latent_frames: 1 + (clip - 1) / r_t,
            latent_height: self.dataset.image_height / r_s,
            latent_width: self.dataset.image_width / r_s,
            x_channels: 2 * per_modality,
            cond_channels: 2 * per_modality,
            schedule: self.schedule,
        })
    }

    pub fn train_setup(&self) -> Result<TrainSetup> {
        Ok(TrainSetup {
            model: self.resolved_model()?,
            codec: self.codec,
            schedule: self.schedule,
        })
    }
}

/// Metadata stored in checkpoint headers so generation can rebuild the
/// pipeline without the original config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointExtra {
    pub codec: CodecConfig,
    pub schedule: ScheduleConfig,
    pub depth_divisor: f64,
    pub stage: u8,
    /// Training-time x_t-token dropout; nonzero means the conditional-only
    /// pathway is trained and generation samples with masked tokens.
    #[serde(default)]
    pub x_token_dropout: f64,
}
