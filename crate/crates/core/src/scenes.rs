//! Procedural RGB-D ground truth: analytic ray casting of plane/sphere
//! scenes along canonical camera trajectories. Every rendered depth is the
//! exact camera-frame Z of the nearest primitive hit, so rendered sequences
//! are multi-view consistent to floating-point precision.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{DepthMap, Intrinsics, Pose, RgbImage, Trajectory};
use crate::{Error, Result};

/// Scene primitive: an infinite plane or a sphere, with a flat albedo and an
/// optional checkerboard modulation that gives the denoiser high-frequency
/// content to learn.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        albedo: [f64; 3],
        #[serde(default)]
        checker: Option<f64>,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
        #[serde(default)]
        checker: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        for p in &self.primitives {
            match p {
                Primitive::Plane { normal, albedo, .. } => {
                    let n = Vector3::from(*normal);
                    if n.norm() == 0.0 {
                        return Err(Error::InvalidConfig("plane normal must be nonzero".into()));
                    }
                    validate_albedo(albedo)?;
                }
                Primitive::Sphere { radius, albedo, .. } => {
                    if !(*radius > 0.0) {
                        return Err(Error::InvalidConfig(format!(
                            "sphere radius must be positive, got {radius}"
                        )));
                    }
                    validate_albedo(albedo)?;
                }
            }
        }
        Ok(())
    }
}

fn validate_albedo(albedo: &[f64; 3]) -> Result<()> {
    if albedo.iter().all(|a| (0.0..=1.0).contains(a)) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("albedo {albedo:?} outside [0,1]")))
    }
}

/// One rendered frame: RGB in [0,1] plus metric depth (0 marks a miss).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

/// A rendered clip: frames aligned one-to-one with a trajectory. The depth
/// divisor is sequence metadata used to normalize depth into [0,1] before
/// the latent codec; for rendered ground truth it is the max scene depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSequence {
    pub frames: Vec<RgbdFrame>,
    pub trajectory: Trajectory,
    pub depth_divisor: f64,
}

impl RgbdSequence {
    pub fn new(frames: Vec<RgbdFrame>, trajectory: Trajectory, depth_divisor: f64) -> Result<Self> {
        if frames.len() != trajectory.len() {
            return Err(Error::shape(format!(
                "{} frames vs {} poses",
                frames.len(),
                trajectory.len()
            )));
        }
        if !(depth_divisor > 0.0) || !depth_divisor.is_finite() {
            return Err(Error::InvalidConfig(format!("depth divisor {depth_divisor} invalid")));
        }
        Ok(RgbdSequence { frames, trajectory, depth_divisor })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max_depth(&self) -> f64 {
        self.frames.iter().map(|f| f.depth.max_depth()).fold(0.0, f64::max)
    }
}

struct Hit {
    /// Ray parameter along the unit world direction.
    t: f64,
    albedo: [f64; 3],
    checker: Option<f64>,
}

fn intersect(prim: &Primitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    match prim {
        Primitive::Plane { point, normal, albedo, checker } => {
            let n = Vector3::from(*normal);
            let denom = dir.dot(&n);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = (Vector3::from(*point) - origin).dot(&n) / denom;
            (t > 1e-9).then_some(Hit { t, albedo: *albedo, checker: *checker })
        }
        Primitive::Sphere { center, radius, albedo, checker } => {
            let oc = origin - Vector3::from(*center);
            // |oc + t d|² = r² with |d| = 1.
            let b = oc.dot(dir);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sqrt_disc = disc.sqrt();
            let t_near = -b - sqrt_disc;
            let t_far = -b + sqrt_disc;
            let t = if t_near > 1e-9 {
                t_near
            } else if t_far > 1e-9 {
                t_far
            } else {
                return None;
            };
            Some(Hit { t, albedo: *albedo, checker: *checker })
        }
    }
}

fn shade(hit: &Hit, world: &Vector3<f64>) -> [f64; 3] {
    match hit.checker {
        None => hit.albedo,
        Some(period) => {
            let cell = (world.x / period).floor() + (world.y / period).floor()
                + (world.z / period).floor();
            let factor = if (cell as i64).rem_euclid(2) == 0 { 1.0 } else { 0.5 };
            [hit.albedo[0] * factor, hit.albedo[1] * factor, hit.albedo[2] * factor]
        }
    }
}

/// Renders one RGB-D frame by intersecting the per-pixel camera ray with
/// every primitive and keeping the nearest hit. Depth is the camera-frame Z
/// of the hit point; misses get the 0 sentinel and black.
pub fn raycast_render(
    scene: &SceneSpec,
    intr: &Intrinsics,
    pose: &Pose,
    h: usize,
    w: usize,
) -> Result<RgbdFrame> {
    scene.validate()?;
    let origin = pose.camera_center();
    let r_t = pose.rotation().transpose();

    let mut rgb = vec![0.0; h * w * 3];
    let mut depth = vec![0.0; h * w];
    let rows: Vec<(&mut [f64], &mut [f64])> =
        rgb.chunks_mut(w * 3).zip(depth.chunks_mut(w)).collect();
    rows.into_par_iter().enumerate().for_each(|(v, (rgb_row, depth_row))| {
        for u in 0..w {
            let dir_cam =
                Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
            let dir = (r_t * dir_cam).normalize();
            let mut best: Option<Hit> = None;
            for prim in &scene.primitives {
                if let Some(hit) = intersect(prim, &origin, &dir) {
                    if best.as_ref().map_or(true, |b| hit.t < b.t) {
                        best = Some(hit);
                    }
                }
            }
            if let Some(hit) = best {
                let world = origin + hit.t * dir;
                let color = shade(&hit, &world);
                rgb_row[u * 3..u * 3 + 3].copy_from_slice(&color);
                depth_row[u] = pose.to_camera(&world).z;
            }
        }
    });

    Ok(RgbdFrame {
        rgb: RgbImage::new(rgb, h, w)?,
        depth: DepthMap::new(depth, h, w)?,
    })
}

/// Renders every pose of a trajectory at the trajectory's intrinsic
/// resolution. The sequence depth divisor is the max rendered depth.
pub fn render_sequence(scene: &SceneSpec, traj: &Trajectory) -> Result<RgbdSequence> {
    let (h, w) = (traj.intrinsics.height, traj.intrinsics.width);
    let frames = traj
        .poses
        .iter()
        .map(|pose| raycast_render(scene, &traj.intrinsics, pose, h, w))
        .collect::<Result<Vec<_>>>()?;
    let divisor = frames.iter().map(|f| f.depth.max_depth()).fold(0.0, f64::max);
    if divisor <= 0.0 {
        return Err(Error::EmptyScene);
    }
    RgbdSequence::new(frames, traj.clone(), divisor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Camera translates along its optical axis, one `step` per frame.
    Forward,
    /// Camera orbits the point (0, 0, ORBIT_RADIUS), `step` radians per frame.
    Orbit,
    /// Camera translates along +x, one `step` per frame.
    Strafe,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(TrajectoryKind::Forward),
            "orbit" => Ok(TrajectoryKind::Orbit),
            "strafe" => Ok(TrajectoryKind::Strafe),
            other => Err(Error::UnknownTrajectoryKind(other.into())),
        }
    }
}

/// Distance from the orbit center to the camera path.
pub const ORBIT_RADIUS: f64 = 2.0;

/// Builds a canonical trajectory. `step` is scene units per frame for the
/// translating kinds and radians per frame for `orbit`.
pub fn make_trajectory(
    kind: TrajectoryKind,
    n: usize,
    step: f64,
    intr: &Intrinsics,
) -> Result<Trajectory> {
    if n < 1 {
        return Err(Error::InsufficientFrames { got: 0, needed: 1 });
    }
    let poses = match kind {
        TrajectoryKind::Forward => (0..n)
            .map(|i| {
                let center = Vector3::new(0.0, 0.0, i as f64 * step);
                Pose::new(Matrix3::identity(), -center)
            })
            .collect::<Result<Vec<_>>>()?,
        TrajectoryKind::Strafe => (0..n)
            .map(|i| {
                let center = Vector3::new(i as f64 * step, 0.0, 0.0);
                Pose::new(Matrix3::identity(), -center)
            })
            .collect::<Result<Vec<_>>>()?,
        TrajectoryKind::Orbit => {
            let target = Vector3::new(0.0, 0.0, ORBIT_RADIUS);
            (0..n)
                .map(|i| {
                    let phi = i as f64 * step;
                    let center =
                        target + ORBIT_RADIUS * Vector3::new(phi.sin(), 0.0, -phi.cos());
                    look_at(&center, &target)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Trajectory::new(poses, *intr)
}

/// World→camera pose with the camera at `center`, optical axis toward
/// `target`, image x aligned with world up × forward. At phi = 0 on the
/// canonical orbit this reduces to the identity rotation.
fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Result<Pose> {
    let forward = (target - center).normalize();
    let up = Vector3::new(0.0, 1.0, 0.0);
    let x_cam = up.cross(&forward).normalize();
    let y_cam = forward.cross(&x_cam);
    let r = Matrix3::from_rows(&[x_cam.transpose(), y_cam.transpose(), forward.transpose()]);
    Pose::new(r, -(r * center))
}

/// Rotation helper used by tests and dataset builders.
pub fn yaw_rotation(radians: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::y()), radians).matrix()
}
