//! Evaluation metrics: PSNR, SSIM, relative camera-pose error, and
//! cross-frame depth-consistency scoring.

use serde::{Deserialize, Serialize};

use crate::geometry::{reproject_depth, rotation_geodesic, Trajectory};
use crate::scenes::RgbdSequence;
use crate::{Error, Result};

/// Peak signal-to-noise ratio in dB for unit-range data. Identical inputs
/// return the `f64::INFINITY` sentinel.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("psnr inputs {} vs {}", a.len(), b.len())));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// Mean local SSIM over valid (fully interior) 11×11 Gaussian windows,
/// σ = 1.5, K1 = 0.01, K2 = 0.03 on unit dynamic range. Multi-channel
/// images average the per-channel scores.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape(format!(
            "ssim plane {}x{} vs buffers {} / {}",
            h,
            w,
            a.len(),
            b.len()
        )));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { op: "ssim", h, w, min: SSIM_WINDOW });
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    // Separable Gaussian filtering of the five moment maps, valid region only.
    let wy = h - SSIM_WINDOW + 1;
    let wx = w - SSIM_WINDOW + 1;
    let filter = |src: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        // Horizontal pass over full rows, then vertical pass over valid rows.
        let mut horiz = vec![0.0; h * wx];
        for y in 0..h {
            for x in 0..wx {
                let mut acc = 0.0;
                for (k, wk) in win.iter().enumerate() {
                    acc += wk * src(y, x + k);
                }
                horiz[y * wx + x] = acc;
            }
        }
        let mut out = vec![0.0; wy * wx];
        for y in 0..wy {
            for x in 0..wx {
                let mut acc = 0.0;
                for (k, wk) in win.iter().enumerate() {
                    acc += wk * horiz[(y + k) * wx + x];
                }
                out[y * wx + x] = acc;
            }
        }
        out
    };

    let mu_a = filter(&|y, x| a[y * w + x]);
    let mu_b = filter(&|y, x| b[y * w + x]);
    let m_aa = filter(&|y, x| a[y * w + x] * a[y * w + x]);
    let m_bb = filter(&|y, x| b[y * w + x] * b[y * w + x]);
    let m_ab = filter(&|y, x| a[y * w + x] * b[y * w + x]);

    let mut acc = 0.0;
    for i in 0..wy * wx {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        acc += s;
    }
    Ok(acc / (wy * wx) as f64)
}

/// SSIM over an interleaved h×w×c image, channel scores averaged.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, channels: usize) -> Result<f64> {
    if a.len() != h * w * channels || b.len() != a.len() {
        return Err(Error::shape(format!(
            "ssim inputs {} / {} vs {}x{}x{}",
            a.len(),
            b.len(),
            h,
            w,
            channels
        )));
    }
    let mut total = 0.0;
    let mut pa = vec![0.0; h * w];
    let mut pb = vec![0.0; h * w];
    for c in 0..channels {
        for i in 0..h * w {
            pa[i] = a[i * channels + c];
            pb[i] = b[i * channels + c];
        }
        total += ssim_plane(&pa, &pb, h, w)?;
    }
    Ok(total / channels as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseErrorReport {
    /// Mean geodesic rotation error in radians over frames 1..N.
    pub r_err: f64,
    /// Mean L2 distance between scale-normalized relative camera centers.
    pub t_err: f64,
    pub per_frame_r: Vec<f64>,
    pub per_frame_t: Vec<f64>,
}

/// Relative pose-error protocol: both trajectories are re-expressed relative
/// to their first frame; per-frame relative camera centers are normalized by
/// each trajectory's maximum center norm (ε-guarded), making T_err invariant
/// to uniform scale. Frame 0 is identically zero by construction and is
/// excluded from the means.
pub fn pose_error(pred: &Trajectory, gt: &Trajectory) -> Result<PoseErrorReport> {
    if pred.len() != gt.len() {
        return Err(Error::TrajectoryLengthMismatch { a: pred.len(), b: gt.len() });
    }
    if pred.len() < 2 {
        return Err(Error::InsufficientFrames { got: pred.len(), needed: 2 });
    }
    let pred_rel = pred.relative_to_first();
    let gt_rel = gt.relative_to_first();

    let centers = |traj: &Trajectory| -> Vec<nalgebra::Vector3<f64>> {
        traj.poses.iter().map(|p| p.camera_center()).collect()
    };
    let pred_c = centers(&pred_rel);
    let gt_c = centers(&gt_rel);
    let max_norm = |cs: &[nalgebra::Vector3<f64>]| {
        cs.iter().map(|c| c.norm()).fold(0.0f64, f64::max).max(1e-9)
    };
    let pred_scale = max_norm(&pred_c);
    let gt_scale = max_norm(&gt_c);

    let mut per_frame_r = Vec::with_capacity(pred.len() - 1);
    let mut per_frame_t = Vec::with_capacity(pred.len() - 1);
    for i in 1..pred.len() {
        per_frame_r.push(rotation_geodesic(
            pred_rel.poses[i].rotation(),
            gt_rel.poses[i].rotation(),
        ));
        per_frame_t.push((pred_c[i] / pred_scale - gt_c[i] / gt_scale).norm());
    }
    let n = per_frame_r.len() as f64;
    Ok(PoseErrorReport {
        r_err: per_frame_r.iter().sum::<f64>() / n,
        t_err: per_frame_t.iter().sum::<f64>() / n,
        per_frame_r,
        per_frame_t,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairConsistency {
    pub src_frame: usize,
    pub dst_frame: usize,
    pub mean_abs_residual: f64,
    pub inlier_frac: f64,
    pub compared_pixels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthConsistency {
    pub pairs: Vec<PairConsistency>,
    pub mean_residual: f64,
    pub inlier_frac: f64,
}

/// Relative-residual threshold under which a warped depth counts as an inlier.
pub const DEPTH_INLIER_REL: f64 = 0.05;

/// Warps each frame's depth into the next pose and compares against the next
/// frame's depth on pixels valid in both.
pub fn depth_consistency(seq: &RgbdSequence) -> Result<DepthConsistency> {
    if seq.len() < 2 {
        return Err(Error::InsufficientFrames { got: seq.len(), needed: 2 });
    }
    let intr = &seq.trajectory.intrinsics;
    let mut pairs = Vec::with_capacity(seq.len() - 1);
    let mut total_residual = 0.0;
    let mut total_inliers = 0usize;
    let mut total_pixels = 0usize;
    for i in 0..seq.len() - 1 {
        let warp = reproject_depth(
            intr,
            &seq.trajectory.poses[i],
            &seq.frames[i].depth,
            None,
            &seq.trajectory.poses[i + 1],
        )?;
        let target = &seq.frames[i + 1].depth;
        let mut residual = 0.0;
        let mut inliers = 0usize;
        let mut compared = 0usize;
        for v in 0..target.height() {
            for u in 0..target.width() {
                if !warp.is_hit(u, v) || !target.is_valid(u, v) {
                    continue;
                }
                let d_ref = target.get(u, v);
                let diff = (warp.depth.get(u, v) - d_ref).abs();
                residual += diff;
                if diff / d_ref <= DEPTH_INLIER_REL {
                    inliers += 1;
                }
                compared += 1;
            }
        }
        if compared == 0 {
            return Err(Error::EmptyWarp);
        }
        total_residual += residual;
        total_inliers += inliers;
        total_pixels += compared;
        pairs.push(PairConsistency {
            src_frame: i,
            dst_frame: i + 1,
            mean_abs_residual: residual / compared as f64,
            inlier_frac: inliers as f64 / compared as f64,
        compared_pixels: compared,
        });
    }
    Ok(DepthConsistency {
        pairs,
        mean_residual: total_residual / total_pixels as f64,
        inlier_frac: total_inliers as f64 / total_pixels as f64,
    })
}
