//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("rotation is not orthonormal within {tol}: deviation {deviation}")]
    InvalidRotation { deviation: f64, tol: f64 },

    #[error("depth must be positive, got {0}")]
    InvalidDepth(f64),

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: usize, height: usize },

    #[error("point is behind the camera (z = {z} <= {eps})")]
    BehindCamera { z: f64, eps: f64 },

    #[error("no valid source pixels to warp")]
    EmptyWarp,

    #[error("trajectory needs at least {needed} poses, got {got}")]
    InsufficientFrames { got: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension not divisible: {0}")]
    NotDivisible(String),

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("reverse step must go backwards in time: t = {t}, t_prev = {t_prev}")]
    InvalidStepOrder { t: usize, t_prev: usize },

    #[error("step schedule must be strictly decreasing and end at 0")]
    InvalidStepSchedule,

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("camera tokens supplied to a model without a camera branch")]
    MissingCameraBranch,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("clip `{id}` too short for stride {stride}: {frames} frames, need {needed}")]
    ClipTooShort { id: String, frames: usize, stride: usize, needed: usize },

    #[error("unknown trajectory kind `{0}`")]
    UnknownTrajectoryKind(String),

    #[error("scene has no primitives")]
    EmptyScene,

    #[error("image too small for {op}: {h}x{w}, need at least {min}")]
    ImageTooSmall { op: &'static str, h: usize, w: usize, min: usize },

    #[error("trajectory length mismatch: {a} vs {b}")]
    TrajectoryLengthMismatch { a: usize, b: usize },

    #[error("point cloud is empty")]
    EmptyPointCloud,

    #[error("bad tensor file {path}: {reason}")]
    TensorFormat { path: PathBuf, reason: String },

    #[error("tensor file {path} truncated at byte {offset}: {reason}")]
    TensorTruncated { path: PathBuf, offset: u64, reason: String },

    #[error("missing file for frame {frame}: {path}")]
    MissingFrameFile { frame: usize, path: PathBuf },

    #[error("sequence directory {dir}: {reason}")]
    BadSequenceDir { dir: PathBuf, reason: String },

    #[error("bad checkpoint {path}: {reason}")]
    CheckpointFormat { path: PathBuf, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
