//! End-to-end wiring between pixel space, the latent codec, and the
//! denoiser: RGB-D ↔ joint latent conversion, Plücker conditioning fields,
//! and trajectory-conditioned generation.
//!
//! Depth enters the shared codec as an image-like 3-channel map after
//! normalization by the sequence depth divisor; the joint latent is
//! `[rgb-latent ; depth-latent]` on the channel axis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{decode, encode, join_latents, split_latent, CodecConfig, LatentTensor, VideoTensor};
use crate::diffusion::{make_step_schedule, sample, NoiseSchedule};
use crate::geometry::{plucker_field, DepthMap, PluckerField, RgbImage, Trajectory};
use crate::model::{encode_camera_tokens, forward_masked, CameraTokens, DenoiserParams};
use crate::scenes::{RgbdFrame, RgbdSequence};
use crate::{Error, Result};

/// Packs RGB frames into an `f × h × w × 3` video tensor.
fn rgb_video(frames: &[&RgbdFrame]) -> Result<VideoTensor> {
    let (h, w) = (frames[0].rgb.height(), frames[0].rgb.width());
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for f in frames {
        if f.rgb.height() != h || f.rgb.width() != w {
            return Err(Error::shape("inconsistent frame sizes"));
        }
        data.extend_from_slice(f.rgb.data());
    }
    VideoTensor::new(frames.len(), h, w, 3, data)
}

/// Packs normalized depth into an image-like 3-channel video tensor.
fn depth_video(frames: &[&RgbdFrame], divisor: f64) -> Result<VideoTensor> {
    if !(divisor > 0.0) {
        return Err(Error::InvalidConfig(format!("depth divisor {divisor} must be positive")));
    }
    let (h, w) = (frames[0].depth.height(), frames[0].depth.width());
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for f in frames {
        for v in f.depth.values() {
            let n = v / divisor;
            data.extend_from_slice(&[n, n, n]);
        }
    }
    VideoTensor::new(frames.len(), h, w, 3, data)
}

/// Joint latent `[v; d]` of an RGB-D clip.
pub fn encode_rgbd_clip(
    frames: &[&RgbdFrame],
    divisor: f64,
    codec: &CodecConfig,
) -> Result<LatentTensor> {
    if frames.is_empty() {
        return Err(Error::shape("empty clip"));
    }
    let v = encode(&rgb_video(frames)?, codec)?;
    let d = encode(&depth_video(frames, divisor)?, codec)?;
    join_latents(&v, &d)
}

/// Conditioning latent: the first frame alone as a 1-frame video. The
/// codec's frame-0 self-padding fills every temporal slot, so the channel
/// layout matches the clip latent exactly.
pub fn encode_condition(
    frame: &RgbdFrame,
    divisor: f64,
    codec: &CodecConfig,
) -> Result<LatentTensor> {
    encode_rgbd_clip(&[frame], divisor, codec)
}

/// Splits and decodes a joint latent back to an RGB-D sequence. Generated
/// values are sanitized to valid ranges: RGB clamps to [0, 1]; the three
/// depth channels average, un-normalize, and clamp to nonnegative.
pub fn decode_rgbd_latent(
    joint: &LatentTensor,
    divisor: f64,
    codec: &CodecConfig,
    trajectory: &Trajectory,
) -> Result<RgbdSequence> {
    let (v, d) = split_latent(joint)?;
    let rgb_vid = decode(&v, codec)?;
    let depth_vid = decode(&d, codec)?;
    if rgb_vid.frames != trajectory.len() {
        return Err(Error::shape(format!(
            "decoded {} frames vs trajectory {}",
            rgb_vid.frames,
            trajectory.len()
        )));
    }
    let (h, w) = (rgb_vid.height, rgb_vid.width);
    let mut frames = Vec::with_capacity(rgb_vid.frames);
    for f in 0..rgb_vid.frames {
        let mut rgb = Vec::with_capacity(h * w * 3);
        let mut depth = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                for k in 0..3 {
                    rgb.push(rgb_vid.get(f, y, x, k).clamp(0.0, 1.0));
                }
                let mean = (depth_vid.get(f, y, x, 0)
                    + depth_vid.get(f, y, x, 1)
                    + depth_vid.get(f, y, x, 2))
                    / 3.0;
                depth.push((mean * divisor).max(0.0));
            }
        }
        frames.push(RgbdFrame {
            rgb: RgbImage::new(rgb, h, w)?,
            depth: DepthMap::new(depth, h, w)?,
        });
    }
    RgbdSequence::new(frames, trajectory.clone(), divisor)
}

/// Dense Plücker fields for camera conditioning: poses re-expressed relative
/// to frame 0, rays rendered on the latent grid (intrinsics downscaled by
/// the codec's spatial factor).
pub fn camera_fields(traj: &Trajectory, codec: &CodecConfig) -> Result<Vec<PluckerField>> {
    let rel = traj.relative_to_first();
    let intr = rel.intrinsics.downscaled(codec.r_s)?;
    rel.poses
        .iter()
        .map(|pose| plucker_field(&intr, pose, intr.height, intr.width))
        .collect()
}

/// Camera tokens for a trajectory, through the model's shared encoder.
pub fn camera_tokens_for_trajectory(
    traj: &Trajectory,
    codec: &CodecConfig,
    params: &DenoiserParams,
) -> Result<CameraTokens> {
    let fields = camera_fields(traj, codec)?;
    encode_camera_tokens(&fields, params)
}

/// Trajectory-conditioned generation: DDIM-samples a joint latent from
/// seeded Gaussian noise, conditioned on the first-frame RGB-D and (when the
/// model has a camera branch) the trajectory's Plücker tokens.
///
/// Desk-scale models train with x_t-token dropout and sample conditional-only
/// (`mask_x_tokens = true`): the clean-content estimate comes from the
/// conditioning pathway while the DDIM envelope handles the noisy latent
/// analytically. Unmasked sampling is available for models trained without
/// dropout.
#[allow(clippy::too_many_arguments)]
pub fn generate_sequence(
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    codec: &CodecConfig,
    first_frame: &RgbdFrame,
    traj: &Trajectory,
    divisor: f64,
    seed: u64,
    sample_steps: usize,
    mask_x_tokens: bool,
) -> Result<RgbdSequence> {
    let cfg = &params.cfg;
    if sched.steps() != cfg.schedule.steps {
        return Err(Error::InvalidSchedule(format!(
            "sampler schedule has {} steps, model was built for {}",
            sched.steps(),
            cfg.schedule.steps
        )));
    }
    let cond = encode_condition(first_frame, divisor, codec)?;
    if cond.channels != cfg.cond_channels
        || cond.height != cfg.latent_height
        || cond.width != cfg.latent_width
    {
        return Err(Error::shape(format!(
            "condition latent {}x{}x{} incompatible with model {}x{}x{}",
            cond.channels,
            cond.height,
            cond.width,
            cfg.cond_channels,
            cfg.latent_height,
            cfg.latent_width
        )));
    }
    let expected_frames = 1 + (cfg.latent_frames - 1) * codec.r_t;
    if traj.len() != expected_frames {
        return Err(Error::shape(format!(
            "trajectory has {} poses; model generates {expected_frames} frames",
            traj.len()
        )));
    }
    let tokens = if params.has_camera_branch() {
        Some(camera_tokens_for_trajectory(traj, codec, params)?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x_t = LatentTensor::zeros(
        cfg.x_channels,
        cfg.latent_frames,
        cfg.latent_height,
        cfg.latent_width,
    );
    for v in x_t.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }

    let steps = make_step_schedule(sched.steps(), sample_steps);
    let x0 = sample(
        |x, t, _: &()| {
            Ok(forward_masked(params, x, t, &cond, tokens.as_ref(), mask_x_tokens)?.0)
        },
        x_t,
        &(),
        &steps,
        sched,
    )?;
    decode_rgbd_latent(&x0, divisor, codec, traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::scenes::{make_trajectory, render_sequence, Primitive, SceneSpec, TrajectoryKind};

    fn small_codec() -> CodecConfig {
        CodecConfig { r_t: 4, r_s: 8 }
    }

    fn scene() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, 5.0],
                normal: [0.0, 0.0, 1.0],
                albedo: [0.8, 0.4, 0.2],
                checker: Some(0.6),
            }],
        }
    }

    fn seq_13() -> RgbdSequence {
        let intr = Intrinsics::new(24.0, 24.0, 11.5, 7.5, 24, 16).unwrap();
        let traj = make_trajectory(TrajectoryKind::Forward, 13, 0.15, &intr).unwrap();
        render_sequence(&scene(), &traj).unwrap()
    }

    #[test]
    fn rgbd_clip_latent_round_trips_exactly() {
        let seq = seq_13();
        let codec = small_codec();
        let frames: Vec<&RgbdFrame> = seq.frames.iter().collect();
        let joint = encode_rgbd_clip(&frames, seq.depth_divisor, &codec).unwrap();
        // 3 channels × r_s² × r_t per modality, doubled by the join.
        assert_eq!(joint.channels, 2 * 3 * 64 * 4);
        assert_eq!(joint.frames, 4);
        assert_eq!((joint.height, joint.width), (2, 3));
        let back = decode_rgbd_latent(&joint, seq.depth_divisor, &codec, &seq.trajectory).unwrap();
        for (a, b) in back.frames.iter().zip(&seq.frames) {
            for (x, y) in a.rgb.data().iter().zip(b.rgb.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.depth.values().iter().zip(b.depth.values()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn condition_latent_matches_clip_channel_width() {
        let seq = seq_13();
        let codec = small_codec();
        let frames: Vec<&RgbdFrame> = seq.frames.iter().collect();
        let joint = encode_rgbd_clip(&frames, seq.depth_divisor, &codec).unwrap();
        let cond = encode_condition(&seq.frames[0], seq.depth_divisor, &codec).unwrap();
        assert_eq!(cond.channels, joint.channels);
        assert_eq!(cond.frames, 1);
        assert_eq!((cond.height, cond.width), (joint.height, joint.width));
    }

    #[test]
    fn camera_fields_are_relative_to_first_pose() {
        let seq = seq_13();
        let codec = small_codec();
        let fields = camera_fields(&seq.trajectory, &codec).unwrap();
        assert_eq!(fields.len(), 13);
        assert_eq!((fields[0].height(), fields[0].width()), (2, 3));
        // Frame 0 is the identity pose: moments vanish.
        let f0 = &fields[0];
        for v in 0..2 {
            for u in 0..3 {
                let ray = f0.ray_at(u, v);
                assert!(ray[3].abs() < 1e-12 && ray[4].abs() < 1e-12 && ray[5].abs() < 1e-12);
            }
        }
        // Later frames of a forward path have nonzero moments.
        let f5 = &fields[5];
        let any_moment = (0..2)
            .flat_map(|v| (0..3).map(move |u| (u, v)))
            .any(|(u, v)| {
                let r = f5.ray_at(u, v);
                r[3].abs() + r[4].abs() + r[5].abs() > 1e-9
            });
        assert!(any_moment);
    }

    #[test]
    fn decode_rejects_frame_mismatch() {
        let seq = seq_13();
        let codec = small_codec();
        let frames: Vec<&RgbdFrame> = seq.frames.iter().collect();
        let joint = encode_rgbd_clip(&frames, seq.depth_divisor, &codec).unwrap();
        let short = make_trajectory(
            TrajectoryKind::Forward,
            9,
            0.15,
            &seq.trajectory.intrinsics,
        )
        .unwrap();
        assert!(decode_rgbd_latent(&joint, seq.depth_divisor, &codec, &short).is_err());
    }
}
