//! Denoiser configuration, parameter containers, initialization, and
//! checkpoint serialization.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::math::Mat;
use crate::diffusion::ScheduleConfig;
use crate::io::{tensor_from_bytes, tensor_to_bytes, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Spatial patch size over the latent grid.
    pub patch: usize,
    /// Sinusoidal timestep feature width (even).
    pub t_embed_dim: usize,
    /// Spatial patch size over the Plücker grid.
    pub camera_token_patch: usize,
    /// Frames per temporal group when stacking Plücker fields, mirroring the
    /// codec's temporal packing (latent frame 0 replicates pose 0).
    pub camera_temporal_group: usize,
    pub latent_frames: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    /// Channels of the denoised joint latent.
    pub x_channels: usize,
    /// Channels of the conditioning latent concatenated at the input.
    pub cond_channels: usize,
    /// Noise schedule the denoiser is built against; the ε-head folds the
    /// analytic `√ᾱ_t` envelope around the network's clean-content estimate.
    pub schedule: ScheduleConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            patch: 2,
            t_embed_dim: 64,
            camera_token_patch: 2,
            camera_temporal_group: 4,
            latent_frames: 4,
            latent_height: 4,
            latent_width: 6,
            x_channels: 1536,
            cond_channels: 1536,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("d_model, n_layers, n_heads must be >= 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.patch == 0
            || self.latent_height % self.patch != 0
            || self.latent_width % self.patch != 0
        {
            return bad(format!(
                "patch {} must divide latent grid {}x{}",
                self.patch, self.latent_height, self.latent_width
            ));
        }
        if self.camera_token_patch == 0
            || self.latent_height % self.camera_token_patch != 0
            || self.latent_width % self.camera_token_patch != 0
        {
            return bad(format!(
                "camera_token_patch {} must divide latent grid {}x{}",
                self.camera_token_patch, self.latent_height, self.latent_width
            ));
        }
        if self.t_embed_dim < 8 || self.t_embed_dim % 2 != 0 {
            return bad(format!("t_embed_dim {} must be even and >= 8", self.t_embed_dim));
        }
        if self.camera_temporal_group == 0 {
            return bad("camera_temporal_group must be >= 1".into());
        }
        if self.latent_frames == 0
            || self.latent_height == 0
            || self.latent_width == 0
            || self.x_channels == 0
            || self.cond_channels == 0
        {
            return bad("latent shape fields must be >= 1".into());
        }
        crate::diffusion::make_schedule(
            self.schedule.steps,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?;
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn tokens_per_frame(&self) -> usize {
        (self.latent_height / self.patch) * (self.latent_width / self.patch)
    }

    pub fn n_tokens(&self) -> usize {
        self.latent_frames * self.tokens_per_frame()
    }

    pub fn n_camera_tokens(&self) -> usize {
        self.latent_frames
            * (self.latent_height / self.camera_token_patch)
            * (self.latent_width / self.camera_token_patch)
    }

    /// Input width of the visual patch embedding.
    pub fn patch_in_dim(&self) -> usize {
        (self.x_channels + self.cond_channels) * self.patch * self.patch
    }

    /// Output width of the unembedding (x channels only).
    pub fn patch_out_dim(&self) -> usize {
        self.x_channels * self.patch * self.patch
    }

    /// Input width of the camera token embedding: stacked Plücker groups.
    pub fn camera_in_dim(&self) -> usize {
        6 * self.camera_temporal_group * self.camera_token_patch * self.camera_token_patch
    }

    /// Number of poses the camera encoder consumes, mirroring the codec's
    /// frame arithmetic.
    pub fn camera_pose_count(&self) -> usize {
        1 + (self.latent_frames - 1) * self.camera_temporal_group
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCameraParams {
    pub wk: Mat,
    pub bk: Vec<f64>,
    pub wv: Mat,
    pub bv: Vec<f64>,
    /// Camera-branch output projection — the zero-init adapter.
    pub wo: Mat,
    pub bo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub time_w: Mat,
    pub time_b: Vec<f64>,
    pub wq: Mat,
    pub bq: Vec<f64>,
    pub wk: Mat,
    pub bk: Vec<f64>,
    pub wv: Mat,
    pub bv: Vec<f64>,
    pub wo: Mat,
    pub bo: Vec<f64>,
    pub camera: Option<LayerCameraParams>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraEncoderParams {
    pub embed_w: Mat,
    pub embed_b: Vec<f64>,
}

/// All trainable state of the denoiser. The same structure doubles as the
/// gradient container ([`DenoiserParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub cfg: ModelConfig,
    pub patch_w: Mat,
    pub patch_b: Vec<f64>,
    pub pos_frame: Mat,
    pub pos_row: Mat,
    pub pos_col: Mat,
    pub camera_encoder: Option<CameraEncoderParams>,
    pub layers: Vec<LayerParams>,
    pub final_g: Vec<f64>,
    pub final_b: Vec<f64>,
    pub unembed_w: Mat,
    pub unembed_b: Vec<f64>,
}

/// How the camera branch is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraInit {
    /// No camera branch at all (stage-1 model).
    Absent,
    /// Camera branch present with its output projections exactly zero, so
    /// the model is bit-identical to the camera-free one at init.
    ZeroOutput,
    /// Fully random camera branch (gradient testing).
    Random,
}

fn randn_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect();
    Mat::from_vec(rows, cols, data)
}

/// Fan-in-scaled init for a weight consumed as `x · W` (W: in×out). For the
/// square d×d projections this is exactly scale 1/√d_model.
fn linear_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    randn_mat(rng, rows, cols, 1.0 / (rows as f64).sqrt())
}

const POS_EMBED_STD: f64 = 0.02;

fn init_camera_layer(rng: &mut ChaCha8Rng, d: usize, zero_output: bool) -> LayerCameraParams {
    let wk = linear_init(rng, d, d);
    let wv = linear_init(rng, d, d);
    let wo = if zero_output { Mat::zeros(d, d) } else { linear_init(rng, d, d) };
    LayerCameraParams { wk, bk: vec![0.0; d], wv, bv: vec![0.0; d], wo, bo: vec![0.0; d] }
}

/// Deterministic parameter initialization from a seed.
pub fn init_params(cfg: &ModelConfig, seed: u64, camera: CameraInit) -> Result<DenoiserParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let layers = (0..cfg.n_layers)
        .map(|_| LayerParams {
            ln1_g: vec![1.0; d],
            ln1_b: vec![0.0; d],
            time_w: linear_init(&mut rng, cfg.t_embed_dim, d),
            time_b: vec![0.0; d],
            wq: linear_init(&mut rng, d, d),
            bq: vec![0.0; d],
            wk: linear_init(&mut rng, d, d),
            bk: vec![0.0; d],
            wv: linear_init(&mut rng, d, d),
            bv: vec![0.0; d],
            wo: linear_init(&mut rng, d, d),
            bo: vec![0.0; d],
            camera: match camera {
                CameraInit::Absent => None,
                CameraInit::ZeroOutput => Some(init_camera_layer(&mut rng, d, true)),
                CameraInit::Random => Some(init_camera_layer(&mut rng, d, false)),
            },
            ln2_g: vec![1.0; d],
            ln2_b: vec![0.0; d],
            w1: linear_init(&mut rng, d, 4 * d),
            b1: vec![0.0; 4 * d],
            w2: linear_init(&mut rng, 4 * d, d),
            b2: vec![0.0; d],
        })
        .collect();
    Ok(DenoiserParams {
        cfg: *cfg,
        patch_w: linear_init(&mut rng, cfg.patch_in_dim(), d),
        patch_b: vec![0.0; d],
        pos_frame: randn_mat(&mut rng, cfg.latent_frames, d, POS_EMBED_STD),
        pos_row: randn_mat(&mut rng, cfg.latent_height / cfg.patch, d, POS_EMBED_STD),
        pos_col: randn_mat(&mut rng, cfg.latent_width / cfg.patch, d, POS_EMBED_STD),
        camera_encoder: match camera {
            CameraInit::Absent => None,
            _ => Some(CameraEncoderParams {
                embed_w: linear_init(&mut rng, cfg.camera_in_dim(), d),
                embed_b: vec![0.0; d],
            }),
        },
        layers,
        final_g: vec![1.0; d],
        final_b: vec![0.0; d],
        unembed_w: linear_init(&mut rng, d, cfg.patch_out_dim()),
        unembed_b: vec![0.0; cfg.patch_out_dim()],
    })
}

impl DenoiserParams {
    pub fn has_camera_branch(&self) -> bool {
        self.camera_encoder.is_some()
    }

    /// Extends a camera-free model with a zero-output camera branch: the
    /// stage-2 starting point. Non-output camera weights draw from `seed`.
    pub fn add_camera_branch(&mut self, seed: u64) -> Result<()> {
        if self.has_camera_branch() {
            return Err(Error::InvalidConfig("model already has a camera branch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.cfg.d_model;
        self.camera_encoder = Some(CameraEncoderParams {
            embed_w: linear_init(&mut rng, self.cfg.camera_in_dim(), d),
            embed_b: vec![0.0; d],
        });
        for layer in &mut self.layers {
            layer.camera = Some(init_camera_layer(&mut rng, d, true));
        }
        Ok(())
    }

    /// Structurally identical container with every value zero; the gradient
    /// and optimizer-state shape.
    pub fn zeros_like(&self) -> DenoiserParams {
        let mut out = self.clone();
        out.zero_all();
        out
    }

    /// Zeroes the unembedding projection so the token path starts silent:
    /// training then learns the gate-only solution first and grows the
    /// token path without any pressure to collapse the output gate.
    pub fn zero_unembed(&mut self) {
        for w in &mut self.unembed_w.data {
            *w = 0.0;
        }
        for b in &mut self.unembed_b {
            *b = 0.0;
        }
    }

    /// Resets every tensor to zero in place (gradient buffer reuse).
    pub fn zero_all(&mut self) {
        self.visit_tensors_mut(|_, _, data| {
            for v in data {
                *v = 0.0;
            }
        });
    }

    /// Visits every tensor as `(name, shape, data)`, in a fixed order.
    pub fn visit_tensors<F: FnMut(&str, &[usize], &[f64])>(&self, mut f: F) {
        let mat = |f: &mut F, name: &str, m: &Mat| f(name, &[m.rows, m.cols], &m.data);
        let vec = |f: &mut F, name: &str, v: &Vec<f64>| f(name, &[v.len()], v);
        mat(&mut f, "patch_embed.w", &self.patch_w);
        vec(&mut f, "patch_embed.b", &self.patch_b);
        mat(&mut f, "pos.frame", &self.pos_frame);
        mat(&mut f, "pos.row", &self.pos_row);
        mat(&mut f, "pos.col", &self.pos_col);
        if let Some(ce) = &self.camera_encoder {
            mat(&mut f, "camera_encoder.w", &ce.embed_w);
            vec(&mut f, "camera_encoder.b", &ce.embed_b);
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = |suffix: &str| format!("layer{i}.{suffix}");
            vec(&mut f, &p("ln1.g"), &l.ln1_g);
            vec(&mut f, &p("ln1.b"), &l.ln1_b);
            mat(&mut f, &p("time.w"), &l.time_w);
            vec(&mut f, &p("time.b"), &l.time_b);
            mat(&mut f, &p("attn.wq"), &l.wq);
            vec(&mut f, &p("attn.bq"), &l.bq);
            mat(&mut f, &p("attn.wk"), &l.wk);
            vec(&mut f, &p("attn.bk"), &l.bk);
            mat(&mut f, &p("attn.wv"), &l.wv);
            vec(&mut f, &p("attn.bv"), &l.bv);
            mat(&mut f, &p("attn.wo"), &l.wo);
            vec(&mut f, &p("attn.bo"), &l.bo);
            if let Some(c) = &l.camera {
                mat(&mut f, &p("camera.wk"), &c.wk);
                vec(&mut f, &p("camera.bk"), &c.bk);
                mat(&mut f, &p("camera.wv"), &c.wv);
                vec(&mut f, &p("camera.bv"), &c.bv);
                mat(&mut f, &p("camera.wo"), &c.wo);
                vec(&mut f, &p("camera.bo"), &c.bo);
            }
            vec(&mut f, &p("ln2.g"), &l.ln2_g);
            vec(&mut f, &p("ln2.b"), &l.ln2_b);
            mat(&mut f, &p("mlp.w1"), &l.w1);
            vec(&mut f, &p("mlp.b1"), &l.b1);
            mat(&mut f, &p("mlp.w2"), &l.w2);
            vec(&mut f, &p("mlp.b2"), &l.b2);
        }
        vec(&mut f, "final_ln.g", &self.final_g);
        vec(&mut f, "final_ln.b", &self.final_b);
        mat(&mut f, "unembed.w", &self.unembed_w);
        vec(&mut f, "unembed.b", &self.unembed_b);
    }

    /// Mutable tensor visitor, same fixed order as [`Self::visit_tensors`].
    pub fn visit_tensors_mut<F: FnMut(&str, &[usize], &mut Vec<f64>)>(&mut self, mut f: F) {
        f("patch_embed.w", &[self.patch_w.rows, self.patch_w.cols], &mut self.patch_w.data);
        f("patch_embed.b", &[self.patch_b.len()], &mut self.patch_b);
        f("pos.frame", &[self.pos_frame.rows, self.pos_frame.cols], &mut self.pos_frame.data);
        f("pos.row", &[self.pos_row.rows, self.pos_row.cols], &mut self.pos_row.data);
        f("pos.col", &[self.pos_col.rows, self.pos_col.cols], &mut self.pos_col.data);
        if let Some(ce) = &mut self.camera_encoder {
            f("camera_encoder.w", &[ce.embed_w.rows, ce.embed_w.cols], &mut ce.embed_w.data);
            f("camera_encoder.b", &[ce.embed_b.len()], &mut ce.embed_b);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |suffix: &str| format!("layer{i}.{suffix}");
            f(&p("ln1.g"), &[l.ln1_g.len()], &mut l.ln1_g);
            f(&p("ln1.b"), &[l.ln1_b.len()], &mut l.ln1_b);
            f(&p("time.w"), &[l.time_w.rows, l.time_w.cols], &mut l.time_w.data);
            f(&p("time.b"), &[l.time_b.len()], &mut l.time_b);
            f(&p("attn.wq"), &[l.wq.rows, l.wq.cols], &mut l.wq.data);
            f(&p("attn.bq"), &[l.bq.len()], &mut l.bq);
            f(&p("attn.wk"), &[l.wk.rows, l.wk.cols], &mut l.wk.data);
            f(&p("attn.bk"), &[l.bk.len()], &mut l.bk);
            f(&p("attn.wv"), &[l.wv.rows, l.wv.cols], &mut l.wv.data);
            f(&p("attn.bv"), &[l.bv.len()], &mut l.bv);
            f(&p("attn.wo"), &[l.wo.rows, l.wo.cols], &mut l.wo.data);
            f(&p("attn.bo"), &[l.bo.len()], &mut l.bo);
            if let Some(c) = &mut l.camera {
                f(&p("camera.wk"), &[c.wk.rows, c.wk.cols], &mut c.wk.data);
                f(&p("camera.bk"), &[c.bk.len()], &mut c.bk);
                f(&p("camera.wv"), &[c.wv.rows, c.wv.cols], &mut c.wv.data);
                f(&p("camera.bv"), &[c.bv.len()], &mut c.bv);
                f(&p("camera.wo"), &[c.wo.rows, c.wo.cols], &mut c.wo.data);
                f(&p("camera.bo"), &[c.bo.len()], &mut c.bo);
            }
            f(&p("ln2.g"), &[l.ln2_g.len()], &mut l.ln2_g);
            f(&p("ln2.b"), &[l.ln2_b.len()], &mut l.ln2_b);
            f(&p("mlp.w1"), &[l.w1.rows, l.w1.cols], &mut l.w1.data);
            f(&p("mlp.b1"), &[l.b1.len()], &mut l.b1);
            f(&p("mlp.w2"), &[l.w2.rows, l.w2.cols], &mut l.w2.data);
            f(&p("mlp.b2"), &[l.b2.len()], &mut l.b2);
        }
        f("final_ln.g", &[self.final_g.len()], &mut self.final_g);
        f("final_ln.b", &[self.final_b.len()], &mut self.final_b);
        f("unembed.w", &[self.unembed_w.rows, self.unembed_w.cols], &mut self.unembed_w.data);
        f("unembed.b", &[self.unembed_b.len()], &mut self.unembed_b);
    }

    /// Named flat views of every tensor, fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_tensors(|name, shape, data| {
            out.push((name.to_string(), shape.to_vec(), data.to_vec()));
        });
        out
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_tensors(|_, _, d| n += d.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_tensors(|_, _, d| ok &= d.iter().all(|x| x.is_finite()));
        ok
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub has_camera: bool,
    /// Caller-owned metadata (run configuration, schedules, divisors).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Writes `params` as a single checkpoint file: JSON config header plus
/// named tensor-container entries.
pub fn save_checkpoint(params: &DenoiserParams, extra: serde_json::Value, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        model: params.cfg,
        has_camera: params.has_camera_branch(),
        extra,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    let tensors = params.named_tensors();
    bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        let tensor = Tensor::new(shape, data)?;
        let blob = tensor_to_bytes(&tensor)?;
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&blob);
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Reads a checkpoint back into a parameter container (f32 storage
/// precision) plus the caller metadata.
pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, serde_json::Value)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: String| Error::CheckpointFormat { path: path.to_path_buf(), reason };
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::CheckpointFormat {
                path: path.to_path_buf(),
                reason: format!("truncated at byte {}", bytes.len()),
            });
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let read_u32 = |off: &mut usize| -> Result<u32> {
        let b = take(off, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let version = read_u32(&mut off)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = read_u32(&mut off)? as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut off, header_len)?)?;
    let n_entries = read_u32(&mut off)? as usize;
    let mut entries: HashMap<String, Tensor> = HashMap::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = read_u32(&mut off)? as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|e| bad(format!("entry name: {e}")))?;
        let blob_len = read_u32(&mut off)? as usize;
        let tensor = tensor_from_bytes(take(&mut off, blob_len)?, path)?;
        entries.insert(name, tensor);
    }
    if off != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - off)));
    }

    let camera = if header.has_camera { CameraInit::ZeroOutput } else { CameraInit::Absent };
    let mut params = init_params(&header.model, 0, camera)?;
    let mut missing = Vec::new();
    params.visit_tensors_mut(|name, shape, data| {
        match entries.get(name) {
            Some(t) if t.dims() == shape => data.copy_from_slice(t.data()),
            Some(t) => missing.push(format!("{name}: shape {:?} vs {:?}", t.dims(), shape)),
            None => missing.push(format!("{name}: missing")),
        }
    });
    if !missing.is_empty() {
        return Err(bad(format!("bad entries: {}", missing.join("; "))));
    }
    if entries.len() != params.named_tensors().len() {
        return Err(bad("checkpoint has unknown extra entries".into()));
    }
    Ok((params, header.extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            patch: 1,
            t_embed_dim: 8,
            camera_token_patch: 1,
            camera_temporal_group: 2,
            latent_frames: 2,
            latent_height: 2,
            latent_width: 2,
            x_channels: 4,
            cond_channels: 4,
        schedule: ScheduleConfig::default(),
        }
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut cfg = tiny_cfg();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.patch = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.t_embed_dim = 7;
        assert!(cfg.validate().is_err());
        assert!(tiny_cfg().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_cfg();
        let a = init_params(&cfg, 7, CameraInit::Random).unwrap();
        let b = init_params(&cfg, 7, CameraInit::Random).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 8, CameraInit::Random).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_init_camera_projection_is_exactly_zero() {
        let params = init_params(&tiny_cfg(), 1, CameraInit::ZeroOutput).unwrap();
        for l in &params.layers {
            let cam = l.camera.as_ref().unwrap();
            assert!(cam.wo.data.iter().all(|w| *w == 0.0));
            assert!(cam.bo.iter().all(|w| *w == 0.0));
            // The rest of the branch is live.
            assert!(cam.wk.data.iter().any(|w| *w != 0.0));
        }
    }

    #[test]
    fn square_projection_init_scale_is_inverse_sqrt_d() {
        let mut cfg = tiny_cfg();
        cfg.d_model = 128;
        cfg.n_heads = 4;
        let params = init_params(&cfg, 3, CameraInit::Absent).unwrap();
        // 128×128 = 16384 entries > 10⁴.
        let w = &params.layers[0].wq;
        let n = w.data.len() as f64;
        let mean = w.data.iter().sum::<f64>() / n;
        let var = w.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let target = 1.0 / cfg.d_model as f64;
        assert!(
            (var - target).abs() / target < 0.1,
            "variance {var} vs target {target}"
        );
    }

    #[test]
    fn visitors_agree_and_cover_everything() {
        let params = init_params(&tiny_cfg(), 5, CameraInit::Random).unwrap();
        let named = params.named_tensors();
        let mut mut_names = Vec::new();
        let mut clone = params.clone();
        clone.visit_tensors_mut(|name, shape, data| {
            mut_names.push((name.to_string(), shape.to_vec(), data.len()));
        });
        assert_eq!(named.len(), mut_names.len());
        for ((n1, s1, d1), (n2, s2, len2)) in named.iter().zip(&mut_names) {
            assert_eq!(n1, n2);
            assert_eq!(s1, s2);
            assert_eq!(d1.len(), *len2);
        }
        // Every tensor of the camera model is present.
        assert!(named.iter().any(|(n, _, _)| n == "camera_encoder.w"));
        assert!(named.iter().any(|(n, _, _)| n == "layer1.camera.wo"));
        assert_eq!(params.n_params(), named.iter().map(|(_, _, d)| d.len()).sum::<usize>());
    }

    #[test]
    fn add_camera_branch_extends_stage1_params() {
        let mut params = init_params(&tiny_cfg(), 2, CameraInit::Absent).unwrap();
        assert!(!params.has_camera_branch());
        params.add_camera_branch(11).unwrap();
        assert!(params.has_camera_branch());
        for l in &params.layers {
            assert!(l.camera.as_ref().unwrap().wo.data.iter().all(|w| *w == 0.0));
        }
        assert!(params.add_camera_branch(11).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = init_params(&tiny_cfg(), 9, CameraInit::ZeroOutput).unwrap();
        let dir = std::env::temp_dir().join("idc_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.idck");
        let extra = serde_json::json!({"depth_divisor": 8.0, "stage": 2});
        save_checkpoint(&params, extra.clone(), &path).unwrap();
        let (loaded, extra2) = load_checkpoint(&path).unwrap();
        assert_eq!(extra, extra2);
        assert_eq!(loaded.cfg, params.cfg);
        assert!(loaded.has_camera_branch());
        // f32 storage: values round-trip at f32 precision.
        let a = params.named_tensors();
        let b = loaded.named_tensors();
        for ((_, _, da), (_, _, db)) in a.iter().zip(&b) {
            for (x, y) in da.iter().zip(db) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let params = init_params(&tiny_cfg(), 9, CameraInit::Absent).unwrap();
        let dir = std::env::temp_dir().join("idc_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corrupt.idck");
        save_checkpoint(&params, serde_json::Value::Null, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointFormat { .. })
        ));
    }
}
