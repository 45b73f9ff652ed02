//! Joint RGB-D video diffusion with explicit camera trajectory control,
//! built small enough to verify end to end on a single machine.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`geometry`] — SE(3) poses, pinhole projection, depth back-projection
//!   and z-buffer reprojection, Plücker ray fields.
//! - [`curation`] — trajectory span scoring and clip filtering.
//! - [`scenes`] — procedural RGB-D ground truth (analytic ray casting).
//! - [`codec`] — exactly invertible space-to-depth latent packing with the
//!   production compression factors, plus joint RGB-D latent concat/split.
//! - [`diffusion`] — noise schedule, forward process, ε-loss, DDIM updates.
//! - [`model`] — the denoiser: a small transformer over joint latent tokens
//!   with zero-initialized camera-token cross-attention.
//! - [`training`] — two-stage progressive training.
//! - [`eval`] — PSNR / SSIM / pose error / depth-consistency metrics.
//! - [`pipeline`] — end-to-end wiring: RGB-D ↔ joint latent, camera
//!   tokens for a trajectory, trajectory-conditioned generation.
//! - [`pointcloud`] — direct RGB-D fusion and PLY export.
//! - [`io`] — bit-exact tensor and sequence file formats.

pub mod codec;
pub mod curation;
pub mod diffusion;
mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod pointcloud;
pub mod scenes;
pub mod training;

pub use error::{Error, Result};
