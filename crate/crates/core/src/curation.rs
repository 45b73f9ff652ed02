//! Clip curation: trajectory span scoring and the filtering pipeline.
//!
//! The span score measures how much a camera moves over a clip:
//! `Score = Σᵢ ‖Δcᵢ‖₂ + γ · Σᵢ Δθᵢ`, where `Δcᵢ` is the camera-center
//! displacement between consecutive frames and `Δθᵢ` the geodesic rotation
//! angle in radians. Center displacements (rather than raw extrinsic
//! translation vectors) make the score exactly invariant to a rigid change
//! of the world frame.

use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_geodesic, Trajectory};
use crate::{Error, Result};

/// A curated video-clip unit: its identity and camera path.
#[derive(Debug, Clone)]
pub struct ClipRecord {
    pub id: String,
    pub trajectory: Trajectory,
    frame_count: usize,
}

impl ClipRecord {
    pub fn new(id: impl Into<String>, trajectory: Trajectory) -> Self {
        let frame_count = trajectory.len();
        ClipRecord { id: id.into(), trajectory, frame_count }
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }
}

/// Whether clips are kept above or below the span threshold. The two source
/// datasets sit on opposite sides: the indoor corpus keeps high-motion clips,
/// the high-dynamics corpus keeps low-motion ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    KeepAbove,
    KeepBelow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Minimum frame count for the keep-above profile (dataset A).
    pub min_frames_a: usize,
    /// Minimum frame count for the keep-below profile (dataset B).
    pub min_frames_b: usize,
    /// Rotation weight γ in the span score.
    pub gamma: f64,
    pub span_threshold: f64,
    pub span_mode: SpanMode,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            min_frames_a: 98,
            min_frames_b: 49,
            gamma: 1.0,
            span_threshold: 0.0,
            span_mode: SpanMode::KeepAbove,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames_a < 1 || self.min_frames_b < 1 {
            return Err(Error::InvalidConfig("min_frames must be >= 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !self.span_threshold.is_finite() {
            return Err(Error::InvalidConfig("span_threshold must be finite".into()));
        }
        Ok(())
    }

    /// The frame threshold that applies under the active span mode.
    pub fn effective_min_frames(&self) -> usize {
        match self.span_mode {
            SpanMode::KeepAbove => self.min_frames_a,
            SpanMode::KeepBelow => self.min_frames_b,
        }
    }
}

/// Span score of a trajectory: translation magnitude plus γ-weighted
/// rotation, summed over consecutive frame pairs.
pub fn trajectory_span_score(traj: &Trajectory, gamma: f64) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InsufficientFrames { got: traj.len(), needed: 2 });
    }
    let mut translation = 0.0;
    let mut rotation = 0.0;
    for pair in traj.poses.windows(2) {
        translation += (pair[1].camera_center() - pair[0].camera_center()).norm();
        rotation += rotation_geodesic(pair[0].rotation(), pair[1].rotation());
    }
    Ok(translation + gamma * rotation)
}

/// Length filter: keep iff the clip has at least `min_frames` frames.
pub fn filter_length(clip: &ClipRecord, min_frames: usize) -> bool {
    clip.frame_count() >= min_frames
}

/// Span filter: keep iff the clip's span score sits on the configured side
/// of the threshold. Clips too short to score are dropped.
pub fn filter_span(clip: &ClipRecord, config: &CurationConfig) -> bool {
    match trajectory_span_score(&clip.trajectory, config.gamma) {
        Ok(score) => match config.span_mode {
            SpanMode::KeepAbove => score >= config.span_threshold,
            SpanMode::KeepBelow => score <= config.span_threshold,
        },
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    #[serde(rename = "LENGTH")]
    Length,
    #[serde(rename = "SPAN")]
    Span,
    #[serde(rename = "EXTERNAL")]
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedClip {
    pub id: String,
    pub reason: DropReason,
}

/// Histogram of span scores over all scoreable input clips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl ScoreHistogram {
    fn from_scores(scores: &[f64], bins: usize) -> Self {
        if scores.is_empty() {
            return ScoreHistogram { lo: 0.0, hi: 0.0, counts: vec![0; bins] };
        }
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0usize; bins];
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        for &s in scores {
            let bin = (((s - lo) / span) * bins as f64).floor() as usize;
            counts[bin.min(bins - 1)] += 1;
        }
        ScoreHistogram { lo, hi, counts }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationReport {
    pub kept: Vec<String>,
    pub dropped: Vec<DroppedClip>,
    pub histogram: ScoreHistogram,
}

impl CurationReport {
    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    pub fn dropped_count(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|d| d.reason == reason).count()
    }
}

/// Runs the filtering pipeline over a batch of clips. Filters apply in
/// pipeline order — length, span, then the optional external predicate (the
/// plug point for dynamics / reconstruction-quality checks that need models
/// this crate does not ship). The report preserves input order.
pub fn curate(
    clips: &[ClipRecord],
    config: &CurationConfig,
    extra: Option<&dyn Fn(&ClipRecord) -> bool>,
) -> Result<CurationReport> {
    config.validate()?;
    let min_frames = config.effective_min_frames();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut scores = Vec::new();
    for clip in clips {
        if let Ok(score) = trajectory_span_score(&clip.trajectory, config.gamma) {
            scores.push(score);
        }
        if !filter_length(clip, min_frames) {
            dropped.push(DroppedClip { id: clip.id.clone(), reason: DropReason::Length });
            continue;
        }
        if !filter_span(clip, config) {
            dropped.push(DroppedClip { id: clip.id.clone(), reason: DropReason::Span });
            continue;
        }
        if let Some(pred) = extra {
            if !pred(clip) {
                dropped.push(DroppedClip { id: clip.id.clone(), reason: DropReason::External });
                continue;
            }
        }
        kept.push(clip.id.clone());
    }
    Ok(CurationReport { kept, dropped, histogram: ScoreHistogram::from_scores(&scores, 10) })
}
