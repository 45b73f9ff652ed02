//! Pinhole back-projection and projection.

use nalgebra::Vector3;

use super::{Intrinsics, Pose, BEHIND_EPS};
use crate::{Error, Result};

/// Lifts pixel `(u, v)` with camera-frame depth `depth` to a world point:
/// `X = Rᵀ (depth · K⁻¹ [u, v, 1]ᵀ − t)`.
pub fn backproject_pixel(
    intr: &Intrinsics,
    pose: &Pose,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidDepth(depth));
    }
    if !intr.contains(u, v) {
        return Err(Error::PixelOutOfBounds { u, v, width: intr.width, height: intr.height });
    }
    let ray = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    Ok(pose.rotation().transpose() * (depth * ray - pose.translation()))
}

/// Projects world point `X` into the view: `p′ = K (R′ X + t′) / Z′`.
/// Returns `(u′, v′, z′)` with the camera-frame depth so callers can z-buffer.
pub fn project_point(intr: &Intrinsics, pose: &Pose, x: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let xc = pose.to_camera(x);
    let z = xc.z;
    if z <= BEHIND_EPS {
        return Err(Error::BehindCamera { z, eps: BEHIND_EPS });
    }
    let u = intr.fx * xc.x / z + intr.cx;
    let v = intr.fy * xc.y / z + intr.cy;
    Ok((u, v, z))
}
