//! Deterministic, exactly invertible latent codec.
//!
//! Stands in for a learned video VAE while preserving every shape
//! relationship: temporal groups of `r_t` frames and spatial `r_s × r_s`
//! blocks fold into channels, so an `f × h × w × k` video becomes a latent
//! of `k·r_s²·r_t` channels over `1 + (f−1)/r_t` frames on an
//! `(h/r_s) × (w/r_s)` grid. Frame 0 forms its own group (self-replicated),
//! which is what makes 49 input frames map to 13 latent frames.
//!
//! Packing is a pure permutation-with-replication, so `decode ∘ encode` is
//! the identity bit for bit and `encode` is linear.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Temporal downsampling factor.
    pub r_t: usize,
    /// Spatial downsampling factor.
    pub r_s: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { r_t: 4, r_s: 8 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_t < 1 || self.r_s < 1 {
            return Err(Error::InvalidConfig("codec factors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Channel-first video latent, layout `c × f × h × w` (w fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || frames == 0 || height == 0 || width == 0 {
            return Err(Error::shape("latent dims must be >= 1"));
        }
        if data.len() != channels * frames * height * width {
            return Err(Error::shape(format!(
                "latent data length {} vs {}x{}x{}x{}",
                data.len(),
                channels,
                frames,
                height,
                width
            )));
        }
        Ok(LatentTensor { channels, frames, height, width, data })
    }

    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        LatentTensor {
            channels,
            frames,
            height,
            width,
            data: vec![0.0; channels * frames * height * width],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, c: usize, f: usize, y: usize, x: usize) -> usize {
        ((c * self.frames + f) * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, f: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, f, y, x)]
    }

    pub fn set(&mut self, c: usize, f: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, f, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        self.channels == other.channels
            && self.frames == other.frames
            && self.height == other.height
            && self.width == other.width
    }
}

/// Frame-major video tensor, layout `f × h × w × k` (k fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::shape(format!(
                "video data length {} vs {}x{}x{}x{}",
                data.len(),
                frames,
                height,
                width,
                channels
            )));
        }
        Ok(VideoTensor { frames, height, width, channels, data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        VideoTensor {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize, k: usize) -> usize {
        ((f * self.height + y) * self.width + x) * self.channels + k
    }

    pub fn get(&self, f: usize, y: usize, x: usize, k: usize) -> f64 {
        self.data[self.index(f, y, x, k)]
    }

    pub fn set(&mut self, f: usize, y: usize, x: usize, k: usize, v: f64) {
        let i = self.index(f, y, x, k);
        self.data[i] = v;
    }
}

/// Number of latent frames for `f` input frames: frame 0 stands alone,
/// every following group of `r_t` frames becomes one latent frame.
pub fn latent_frames(f: usize, r_t: usize) -> Result<usize> {
    if f == 0 {
        return Err(Error::shape("video needs at least one frame"));
    }
    if (f - 1) % r_t != 0 {
        return Err(Error::NotDivisible(format!(
            "frame count {f} must satisfy f ≡ 1 (mod r_t={r_t})"
        )));
    }
    Ok(1 + (f - 1) / r_t)
}

/// Latent shape `(c, f', h', w')` produced by [`encode`] for an
/// `f × h × w × k` input, without allocating anything.
pub fn encoded_shape(cfg: &CodecConfig, f: usize, h: usize, w: usize, k: usize) -> Result<(usize, usize, usize, usize)> {
    cfg.validate()?;
    let fp = latent_frames(f, cfg.r_t)?;
    if h % cfg.r_s != 0 || w % cfg.r_s != 0 {
        return Err(Error::NotDivisible(format!(
            "spatial dims {h}x{w} must be divisible by r_s={}",
            cfg.r_s
        )));
    }
    Ok((k * cfg.r_s * cfg.r_s * cfg.r_t, fp, h / cfg.r_s, w / cfg.r_s))
}

/// Index of the source frame feeding temporal slot `dt` of latent frame `lf`.
/// Latent frame 0 replicates frame 0 into every slot.
#[inline]
fn source_frame(lf: usize, dt: usize, r_t: usize) -> usize {
    if lf == 0 {
        0
    } else {
        1 + (lf - 1) * r_t + dt
    }
}

/// Latent channel for (temporal slot, block row, block col, pixel channel).
#[inline]
fn latent_channel(dt: usize, dy: usize, dx: usize, k: usize, r_s: usize, k_total: usize) -> usize {
    ((dt * r_s + dy) * r_s + dx) * k_total + k
}

/// Packs a video into a latent tensor. Lossless: every input value lands in
/// exactly one latent slot (frame 0 in `r_t` slots).
pub fn encode(video: &VideoTensor, cfg: &CodecConfig) -> Result<LatentTensor> {
    let (c, fp, hp, wp) =
        encoded_shape(cfg, video.frames, video.height, video.width, video.channels)?;
    let mut latent = LatentTensor::zeros(c, fp, hp, wp);
    let k_total = video.channels;
    for lf in 0..fp {
        for dt in 0..cfg.r_t {
            let sf = source_frame(lf, dt, cfg.r_t);
            for y in 0..hp {
                for x in 0..wp {
                    for dy in 0..cfg.r_s {
                        for dx in 0..cfg.r_s {
                            let sy = y * cfg.r_s + dy;
                            let sx = x * cfg.r_s + dx;
                            for k in 0..k_total {
                                let lc = latent_channel(dt, dy, dx, k, cfg.r_s, k_total);
                                let v = video.get(sf, sy, sx, k);
                                latent.set(lc, lf, y, x, v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(latent)
}

/// Exact inverse of [`encode`]. Frame 0 is recovered from temporal slot 0 of
/// latent frame 0.
pub fn decode(latent: &LatentTensor, cfg: &CodecConfig) -> Result<VideoTensor> {
    cfg.validate()?;
    let group = cfg.r_s * cfg.r_s * cfg.r_t;
    if latent.channels % group != 0 {
        return Err(Error::NotDivisible(format!(
            "latent channels {} must be divisible by r_s²·r_t = {group}",
            latent.channels
        )));
    }
    let k_total = latent.channels / group;
    let f = 1 + (latent.frames - 1) * cfg.r_t;
    let h = latent.height * cfg.r_s;
    let w = latent.width * cfg.r_s;
    let mut video = VideoTensor::zeros(f, h, w, k_total);
    for lf in 0..latent.frames {
        // Slot 0 suffices for latent frame 0; later frames consume all slots.
        let slots = if lf == 0 { 1 } else { cfg.r_t };
        for dt in 0..slots {
            let sf = source_frame(lf, dt, cfg.r_t);
            for y in 0..latent.height {
                for x in 0..latent.width {
                    for dy in 0..cfg.r_s {
                        for dx in 0..cfg.r_s {
                            for k in 0..k_total {
                                let lc = latent_channel(dt, dy, dx, k, cfg.r_s, k_total);
                                let v = latent.get(lc, lf, y, x);
                                video.set(sf, y * cfg.r_s + dy, x * cfg.r_s + dx, k, v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(video)
}

/// Concatenates the RGB-derived and depth-derived latents on the channel
/// axis, RGB first.
pub fn join_latents(v: &LatentTensor, d: &LatentTensor) -> Result<LatentTensor> {
    if v.frames != d.frames || v.height != d.height || v.width != d.width {
        return Err(Error::shape(format!(
            "latent frame/spatial dims differ: {}x{}x{} vs {}x{}x{}",
            v.frames, v.height, v.width, d.frames, d.height, d.width
        )));
    }
    let mut data = Vec::with_capacity(v.numel() + d.numel());
    data.extend_from_slice(v.data());
    data.extend_from_slice(d.data());
    LatentTensor::new(v.channels + d.channels, v.frames, v.height, v.width, data)
}

/// Splits a joint latent back into (RGB-derived, depth-derived) halves.
pub fn split_latent(x: &LatentTensor) -> Result<(LatentTensor, LatentTensor)> {
    if x.channels % 2 != 0 {
        return Err(Error::shape(format!(
            "joint latent channel count {} is odd",
            x.channels
        )));
    }
    let half = x.channels / 2;
    let split_at = half * x.frames * x.height * x.width;
    let v = LatentTensor::new(half, x.frames, x.height, x.width, x.data()[..split_at].to_vec())?;
    let d = LatentTensor::new(half, x.frames, x.height, x.width, x.data()[split_at..].to_vec())?;
    Ok((v, d))
}
