//! Forward depth warping between views with z-buffer collision handling.

use super::{backproject_pixel, project_point, DepthMap, Intrinsics, Pose, RgbImage};
use crate::{Error, Result};

/// Result of warping one view into another.
#[derive(Debug, Clone)]
pub struct Warp {
    pub depth: DepthMap,
    pub rgb: Option<RgbImage>,
    /// Row-major h×w; `true` where at least one source pixel landed.
    pub mask: Vec<bool>,
}

impl Warp {
    pub fn is_hit(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.depth.width() + u]
    }

    pub fn hit_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Forward-splats every valid source pixel into the destination view.
/// Each pixel is back-projected with its depth, projected into `dst_pose`,
/// and written to the nearest destination pixel; collisions keep the
/// smallest destination-frame depth. Unhit pixels carry the 0 sentinel and a
/// `false` mask entry.
pub fn reproject_depth(
    intr: &Intrinsics,
    src_pose: &Pose,
    src_depth: &DepthMap,
    src_rgb: Option<&RgbImage>,
    dst_pose: &Pose,
) -> Result<Warp> {
    let (h, w) = (src_depth.height(), src_depth.width());
    if let Some(rgb) = src_rgb {
        if rgb.height() != h || rgb.width() != w {
            return Err(Error::shape(format!(
                "rgb {}x{} does not match depth {}x{}",
                rgb.height(),
                rgb.width(),
                h,
                w
            )));
        }
    }
    if src_depth.valid_count() == 0 {
        return Err(Error::EmptyWarp);
    }

    let mut zbuf = vec![f64::INFINITY; h * w];
    let mut out_depth = DepthMap::filled(h, w, 0.0);
    let mut out_rgb = src_rgb.map(|_| RgbImage::filled(h, w, [0.0; 3]));
    let mut mask = vec![false; h * w];

    for v in 0..h {
        for u in 0..w {
            let d = src_depth.get(u, v);
            if d <= 0.0 {
                continue;
            }
            let world = backproject_pixel(intr, src_pose, u as f64, v as f64, d)?;
            let (ud, vd, zd) = match project_point(intr, dst_pose, &world) {
                Ok(p) => p,
                Err(Error::BehindCamera { .. }) => continue,
                Err(e) => return Err(e),
            };
            let ur = ud.round();
            let vr = vd.round();
            if ur < 0.0 || vr < 0.0 || ur > (w - 1) as f64 || vr > (h - 1) as f64 {
                continue;
            }
            let (ui, vi) = (ur as usize, vr as usize);
            let idx = vi * w + ui;
            if zd < zbuf[idx] {
                zbuf[idx] = zd;
                out_depth.set(ui, vi, zd);
                mask[idx] = true;
                if let (Some(out), Some(src)) = (out_rgb.as_mut(), src_rgb) {
                    out.set(ui, vi, src.get(u, v));
                }
            }
        }
    }

    Ok(Warp { depth: out_depth, rgb: out_rgb, mask })
}
