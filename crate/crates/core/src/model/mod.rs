//! The denoiser: a small pre-norm transformer over joint RGB-D latent
//! tokens with a zero-initialized camera-token cross-attention branch.
//!
//! The camera branch injects geometry by letting latent queries attend to
//! tokens embedded from dense Plücker ray fields of the target trajectory.
//! Its output projection starts at zero, so a freshly extended model is
//! bit-identical to the camera-free one — the property the two-stage
//! training strategy rests on.

pub mod math;
mod net;
mod params;

pub use net::{
    backward, denoise, encode_camera_tokens, forward, forward_masked, CameraTokens, ForwardCache,
};
pub use params::{
    init_params, load_checkpoint, save_checkpoint, CameraEncoderParams, CameraInit,
    CheckpointHeader, DenoiserParams, LayerCameraParams, LayerParams, ModelConfig,
};
