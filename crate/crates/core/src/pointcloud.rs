//! Direct point-cloud fusion from RGB-D sequences and ASCII PLY export.
//!
//! Fusion is deliberately raw — every sampled valid pixel is back-projected
//! and kept, with no deduplication or outlier removal — so that the claim
//! "generated outputs reconstruct directly" stays testable.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::geometry::backproject_pixel;
use crate::scenes::RgbdSequence;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub xyz: [f64; 3],
    /// Linear RGB in [0, 1].
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<ColoredPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Back-projects every `pixel_stride`-th valid pixel of every
/// `frame_stride`-th frame into the world frame. Depths outside
/// `(0, max_depth]` are skipped.
pub fn fuse(
    seq: &RgbdSequence,
    frame_stride: usize,
    pixel_stride: usize,
    max_depth: f64,
) -> Result<PointCloud> {
    if frame_stride < 1 || pixel_stride < 1 {
        return Err(Error::InvalidConfig("strides must be >= 1".into()));
    }
    if !(max_depth > 0.0) {
        return Err(Error::InvalidConfig(format!("max_depth {max_depth} must be positive")));
    }
    let intr = &seq.trajectory.intrinsics;
    let mut points = Vec::new();
    for (frame, pose) in seq
        .frames
        .iter()
        .zip(&seq.trajectory.poses)
        .step_by(frame_stride)
    {
        for v in (0..frame.depth.height()).step_by(pixel_stride) {
            for u in (0..frame.depth.width()).step_by(pixel_stride) {
                let d = frame.depth.get(u, v);
                if d <= 0.0 || d > max_depth {
                    continue;
                }
                let xyz = backproject_pixel(intr, pose, u as f64, v as f64, d)?;
                points.push(ColoredPoint { xyz: [xyz.x, xyz.y, xyz.z], rgb: frame.rgb.get(u, v) });
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    Ok(PointCloud { points })
}

fn quantize_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an ASCII PLY with `x y z red green blue` vertices. Positions keep
/// full double precision (shortest round-trip formatting); colors quantize
/// to 8 bits.
pub fn export_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "property uchar red")?;
    writeln!(w, "property uchar green")?;
    writeln!(w, "property uchar blue")?;
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            p.xyz[0],
            p.xyz[1],
            p.xyz[2],
            quantize_u8(p.rgb[0]),
            quantize_u8(p.rgb[1]),
            quantize_u8(p.rgb[2]),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal reader for the PLY files written by [`export_ply`]; used to close
/// the round trip in tests and tooling.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |reason: &str| Error::TensorFormat {
        path: path.to_path_buf(),
        reason: format!("ply: {reason}"),
    };
    if lines.next() != Some("ply") {
        return Err(bad("missing ply header"));
    }
    let mut vertex_count = None;
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = Some(rest.parse::<usize>().map_err(|e| bad(&e.to_string()))?);
        }
    }
    let count = vertex_count.ok_or_else(|| bad("missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("fewer vertices than declared"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(&format!("expected 6 fields, got {}", fields.len())));
        }
        let xyz = [
            fields[0].parse::<f64>().map_err(|e| bad(&e.to_string()))?,
            fields[1].parse::<f64>().map_err(|e| bad(&e.to_string()))?,
            fields[2].parse::<f64>().map_err(|e| bad(&e.to_string()))?,
        ];
        let rgb = [
            fields[3].parse::<u8>().map_err(|e| bad(&e.to_string()))? as f64 / 255.0,
            fields[4].parse::<u8>().map_err(|e| bad(&e.to_string()))? as f64 / 255.0,
            fields[5].parse::<u8>().map_err(|e| bad(&e.to_string()))? as f64 / 255.0,
        ];
        points.push(ColoredPoint { xyz, rgb });
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::scenes::{
        make_trajectory, render_sequence, Primitive, SceneSpec, TrajectoryKind,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(30.0, 30.0, 15.5, 11.5, 32, 24).unwrap()
    }

    fn plane_scene() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, 4.0],
                normal: [0.0, 0.0, 1.0],
                albedo: [0.9, 0.5, 0.1],
                checker: None,
            }],
        }
    }

    #[test]
    fn single_frame_plane_points_lie_at_z4() {
        let traj = make_trajectory(TrajectoryKind::Forward, 1, 0.0, &intr()).unwrap();
        let seq = render_sequence(&plane_scene(), &traj).unwrap();
        let cloud = fuse(&seq, 1, 1, 100.0).unwrap();
        assert_eq!(cloud.len(), 32 * 24);
        for p in &cloud.points {
            assert!((p.xyz[2] - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn multi_frame_static_scene_points_lie_on_surfaces() {
        // Plane + sphere, two viewpoints; every fused point must satisfy one
        // of the analytic surface equations.
        let scene = SceneSpec {
            primitives: vec![
                Primitive::Plane {
                    point: [0.0, 0.0, 6.0],
                    normal: [0.0, 0.0, 1.0],
                    albedo: [0.2, 0.8, 0.2],
                    checker: Some(0.5),
                },
                Primitive::Sphere {
                    center: [0.0, 0.0, 3.0],
                    radius: 0.75,
                    albedo: [0.8, 0.2, 0.2],
                    checker: None,
                },
            ],
        };
        let traj = make_trajectory(TrajectoryKind::Strafe, 2, 0.4, &intr()).unwrap();
        let seq = render_sequence(&scene, &traj).unwrap();
        let cloud = fuse(&seq, 1, 1, 100.0).unwrap();
        let mut worst = 0.0f64;
        for p in &cloud.points {
            let plane_res = (p.xyz[2] - 6.0).abs();
            let dx = p.xyz[0];
            let dy = p.xyz[1];
            let dz = p.xyz[2] - 3.0;
            let sphere_res = ((dx * dx + dy * dy + dz * dz).sqrt() - 0.75).abs();
            worst = worst.max(plane_res.min(sphere_res));
        }
        assert!(worst < 1e-6, "max surface residual {worst}");
    }

    #[test]
    fn pixel_stride_grid_arithmetic() {
        let traj = make_trajectory(TrajectoryKind::Forward, 1, 0.0, &intr()).unwrap();
        let seq = render_sequence(&plane_scene(), &traj).unwrap();
        let full = fuse(&seq, 1, 1, 100.0).unwrap();
        let strided = fuse(&seq, 1, 2, 100.0).unwrap();
        // ceil(32/2) * ceil(24/2) per frame.
        assert_eq!(full.len(), 32 * 24);
        assert_eq!(strided.len(), 16 * 12);
    }

    #[test]
    fn fusion_is_frame_permutation_invariant_for_static_scenes() {
        let traj = crate::geometry::Trajectory::new(
            vec![crate::geometry::Pose::identity(); 3],
            intr(),
        )
        .unwrap();
        let seq = render_sequence(&plane_scene(), &traj).unwrap();
        let mut reversed = seq.clone();
        reversed.frames.reverse();
        let a = fuse(&seq, 1, 1, 100.0).unwrap();
        let b = fuse(&reversed, 1, 1, 100.0).unwrap();
        let key = |p: &ColoredPoint| {
            (
                (p.xyz[0] * 1e9).round() as i64,
                (p.xyz[1] * 1e9).round() as i64,
                (p.xyz[2] * 1e9).round() as i64,
            )
        };
        let mut ka: Vec<_> = a.points.iter().map(key).collect();
        let mut kb: Vec<_> = b.points.iter().map(key).collect();
        ka.sort();
        kb.sort();
        assert_eq!(ka, kb);
    }

    #[test]
    fn max_depth_filters_far_points() {
        let traj = make_trajectory(TrajectoryKind::Forward, 1, 0.0, &intr()).unwrap();
        let seq = render_sequence(&plane_scene(), &traj).unwrap();
        assert!(matches!(fuse(&seq, 1, 1, 3.0), Err(Error::EmptyPointCloud)));
    }

    #[test]
    fn ply_single_point_round_trip() {
        let cloud = PointCloud {
            points: vec![ColoredPoint { xyz: [1.25, -2.5, 3.75], rgb: [1.0, 0.5, 0.0] }],
        };
        let dir = std::env::temp_dir().join("idc_ply_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one.ply");
        export_ply(&cloud, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        let back = read_ply(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.points[0].xyz, [1.25, -2.5, 3.75]);
    }

    #[test]
    fn ply_random_round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let points: Vec<ColoredPoint> = (0..10_000)
            .map(|_| ColoredPoint {
                xyz: [
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                ],
                rgb: [rng.gen(), rng.gen(), rng.gen()],
            })
            .collect();
        let cloud = PointCloud { points };
        let dir = std::env::temp_dir().join("idc_ply_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("many.ply");
        export_ply(&cloud, &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in back.points.iter().zip(&cloud.points) {
            // Positions round-trip exactly; colors within one quantization step.
            assert_eq!(a.xyz, b.xyz);
            for c in 0..3 {
                assert!((a.rgb[c] - b.rgb[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn empty_cloud_export_is_an_error() {
        let path = std::env::temp_dir().join("idc_ply_tests_empty.ply");
        assert!(matches!(
            export_ply(&PointCloud::default(), &path),
            Err(Error::EmptyPointCloud)
        ));
    }
}
