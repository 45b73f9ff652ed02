//! Plücker ray fields: the 6-vector `[d; o × d]` per pixel, with `d` the
//! world-frame unit ray direction and `o` the camera origin.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{Intrinsics, Pose};
use crate::{Error, Result};

/// Dense 6×h×w ray field, channel-major: channels 0..3 hold the direction,
/// channels 3..6 the moment `o × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerField {
    data: Vec<f64>,
    height: usize,
    width: usize,
}

impl PluckerField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Channel-major storage, `data[c * h * w + v * w + u]`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn ray_at(&self, u: usize, v: usize) -> [f64; 6] {
        let hw = self.height * self.width;
        let i = v * self.width + u;
        [
            self.data[i],
            self.data[hw + i],
            self.data[2 * hw + i],
            self.data[3 * hw + i],
            self.data[4 * hw + i],
            self.data[5 * hw + i],
        ]
    }

    /// Checks the per-pixel invariants: unit direction, moment orthogonal to
    /// direction. Returns the largest deviation seen.
    pub fn max_invariant_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in 0..self.height {
            for u in 0..self.width {
                let r = self.ray_at(u, v);
                let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                let dot = r[0] * r[3] + r[1] * r[4] + r[2] * r[5];
                worst = worst.max((norm - 1.0).abs()).max(dot.abs());
            }
        }
        worst
    }
}

fn ray_through(intr: &Intrinsics, pose: &Pose, u: f64, v: f64) -> [f64; 6] {
    let dir_cam = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let dir = (pose.rotation().transpose() * dir_cam).normalize();
    let origin = pose.camera_center();
    let moment = origin.cross(&dir);
    [dir.x, dir.y, dir.z, moment.x, moment.y, moment.z]
}

/// Plücker ray through the center of pixel `(u, v)`.
pub fn plucker_ray(intr: &Intrinsics, pose: &Pose, u: f64, v: f64) -> Result<[f64; 6]> {
    if !intr.contains(u, v) {
        return Err(Error::PixelOutOfBounds { u, v, width: intr.width, height: intr.height });
    }
    Ok(ray_through(intr, pose, u, v))
}

/// Dense field over an h×w grid. The grid defines the image; `intr` supplies
/// focal lengths and principal point (callers pass intrinsics rescaled to the
/// grid resolution when it differs from the capture resolution).
pub fn plucker_field(intr: &Intrinsics, pose: &Pose, h: usize, w: usize) -> Result<PluckerField> {
    if h == 0 || w == 0 {
        return Err(Error::shape("plucker field needs h, w >= 1"));
    }
    let hw = h * w;
    // Fill pixel-major in parallel (rows are independent), then transpose to
    // channel-major; both passes are deterministic.
    let mut pixel_major = vec![0.0; hw * 6];
    pixel_major.par_chunks_mut(w * 6).enumerate().for_each(|(v, row)| {
        for u in 0..w {
            let ray = ray_through(intr, pose, u as f64, v as f64);
            row[u * 6..u * 6 + 6].copy_from_slice(&ray);
        }
    });
    let mut data = vec![0.0; 6 * hw];
    for i in 0..hw {
        for c in 0..6 {
            data[c * hw + i] = pixel_major[i * 6 + c];
        }
    }
    Ok(PluckerField { data, height: h, width: w })
}
