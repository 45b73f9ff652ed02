//! Camera geometry: SE(3) poses, pinhole projection, depth back-projection
//! and reprojection, Plücker ray fields.
//!
//! Conventions, used everywhere in the crate:
//! - Extrinsics are world→camera: `x_cam = R · x_world + t`. The camera
//!   origin in world coordinates is `o = −Rᵀ t`.
//! - Pixel `(u, v)` refers to the pixel center at integer coordinates,
//!   `u` along width (x), `v` along height (y). No half-pixel offset.

mod plucker;
mod project;
mod warp;

pub use plucker::{plucker_field, plucker_ray, PluckerField};
pub use project::{backproject_pixel, project_point};
pub use warp::{reproject_depth, Warp};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Result};

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Points with camera-frame depth below this are treated as behind the camera.
pub const BEHIND_EPS: f64 = 1e-6;

/// Pinhole intrinsics shared by every frame of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Intrinsics { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be nonzero".into()));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics for the same camera at `1/factor` resolution, e.g. the
    /// latent grid of the codec (`factor = r_s`).
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        let f = factor as f64;
        Intrinsics::new(
            self.fx / f,
            self.fy / f,
            self.cx / f,
            self.cy / f,
            self.width / factor,
            self.height / factor,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// World→camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant one within [`ROTATION_TOL`]. Degenerate input is an error,
    /// never silently re-orthonormalized.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let gram = r.transpose() * r;
        let mut deviation: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((gram[(i, j)] - target).abs());
            }
        }
        deviation = deviation.max((r.determinant() - 1.0).abs());
        if !deviation.is_finite() || deviation > ROTATION_TOL {
            return Err(Error::InvalidRotation { deviation, tol: ROTATION_TOL });
        }
        if !t.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("pose translation".into()));
        }
        Ok(Pose { r, t })
    }

    pub fn identity() -> Self {
        Pose { r: Matrix3::identity(), t: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Camera origin in world coordinates, `o = −Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// World point → camera frame.
    pub fn to_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.r * x_world + self.t
    }

    /// Camera point → world frame.
    pub fn to_world(&self, x_cam: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (x_cam - self.t)
    }

    pub fn inverse(&self) -> Pose {
        Pose { r: self.r.transpose(), t: -(self.r.transpose() * self.t) }
    }
}

/// Transform from `a`'s camera frame to `b`'s camera frame (`b` relative to
/// `a`; apply `a`⁻¹, then `b`). `relative_pose(p, p)` is the identity.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let r = b.r * a.r.transpose();
    let t = b.t - r * a.t;
    Pose { r, t }
}

/// Geodesic distance on SO(3): `arccos((trace(RaᵀRb) − 1) / 2)`, clamped to
/// `[0, π]`.
pub fn rotation_geodesic(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let cos = ((ra.transpose() * rb).trace() - 1.0) / 2.0;
    cos.clamp(-1.0, 1.0).acos()
}

/// An ordered camera path with shared intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub intrinsics: Intrinsics,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, intrinsics: Intrinsics) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InsufficientFrames { got: 0, needed: 1 });
        }
        intrinsics.validate()?;
        Ok(Trajectory { poses, intrinsics })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// The same path re-expressed so the first pose is the identity: pose `i`
    /// becomes the transform from camera-0 coordinates to camera-i coordinates.
    pub fn relative_to_first(&self) -> Trajectory {
        let first = self.poses[0];
        Trajectory {
            poses: self.poses.iter().map(|p| relative_pose(&first, p)).collect(),
            intrinsics: self.intrinsics,
        }
    }

    pub fn to_json(&self) -> TrajectoryJson {
        TrajectoryJson {
            intrinsics: self.intrinsics,
            poses: self
                .poses
                .iter()
                .map(|p| PoseJson {
                    r: {
                        let mut row_major = [0.0; 9];
                        for i in 0..3 {
                            for j in 0..3 {
                                row_major[3 * i + j] = p.r[(i, j)];
                            }
                        }
                        row_major
                    },
                    t: [p.t.x, p.t.y, p.t.z],
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let wire: TrajectoryJson = serde_json::from_str(&text)?;
        wire.into_trajectory()
    }
}

/// Wire schema: `{"intrinsics": {...}, "poses": [{"R": [9 row-major], "t": [3]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryJson {
    pub intrinsics: Intrinsics,
    pub poses: Vec<PoseJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseJson {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl TrajectoryJson {
    pub fn into_trajectory(self) -> Result<Trajectory> {
        let poses = self
            .poses
            .iter()
            .map(|p| {
                let r = Matrix3::new(
                    p.r[0], p.r[1], p.r[2], p.r[3], p.r[4], p.r[5], p.r[6], p.r[7], p.r[8],
                );
                Pose::new(r, Vector3::new(p.t[0], p.t[1], p.t[2]))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(poses, self.intrinsics)
    }
}

/// Dense depth grid. 0 is the "invalid / no surface" sentinel; valid depths
/// are strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Vec<f64>,
    height: usize,
    width: usize,
}

impl DepthMap {
    pub fn new(values: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "depth buffer has {} values for {}x{}",
                values.len(),
                height,
                width
            )));
        }
        if !values.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return Err(Error::NonFinite("depth map".into()));
        }
        Ok(DepthMap { values, height, width })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        DepthMap { values: vec![value; height * width], height, width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        self.values[v * self.width + u] = d;
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v) > 0.0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_depth(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| **d > 0.0).count()
    }
}

/// Row-major h×w×3 image, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    data: Vec<f64>,
    height: usize,
    width: usize,
}

impl RgbImage {
    pub fn new(data: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "rgb buffer has {} values for {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("rgb image".into()));
        }
        Ok(RgbImage { data, height, width })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        RgbImage { data, height, width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
