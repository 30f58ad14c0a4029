use serde::{Deserialize, Serialize};

use super::rotation::{Mat3, Vec3};
use super::skeleton::FEATURE_DIM;
use crate::error::{Error, Result};

/// World-frame joint positions over time (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub fps: f64,
    /// `frames[t][j]` is joint `j` at frame `t`.
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidMotion(format!("fps must be positive, got {}", self.fps)));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != joint_count {
                return Err(Error::InvalidMotion(format!(
                    "frame {t} has {} joints, skeleton has {joint_count}",
                    frame.len()
                )));
            }
            if frame.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMotion(format!("frame {t} has non-finite coordinates")));
            }
        }
        Ok(())
    }

    /// Adds a constant offset to every joint of every frame.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                    .collect()
            })
            .collect();
        MotionSequence {
            fps: self.fps,
            frames,
        }
    }

    /// Applies a world rotation to every joint position.
    pub fn rotated(&self, rotation: &Mat3) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| (rotation * Vec3::from(*p)).into())
                    .collect()
            })
            .collect();
        MotionSequence {
            fps: self.fps,
            frames,
        }
    }
}

/// The 29-value joint-angle vector of one frame, in skeleton feature order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFeatures {
    pub values: [f64; FEATURE_DIM],
}

impl PoseFeatures {
    pub fn zeros() -> Self {
        PoseFeatures {
            values: [0.0; FEATURE_DIM],
        }
    }
}

/// Per-frame pose features, `rows.len()` equal to the source frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub fps: f64,
    pub rows: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Gravity-referenced heading frame anchored at the pelvis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrame {
    /// Columns are (forward, up, lateral) in world coordinates.
    pub rotation: Mat3,
    pub origin: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegeneracyKind {
    /// Segment has no sagittal-plane component; adduction pinned to ±π/2.
    SagittalProjection,
    /// Grandchild collinear with the segment axis; twist reported as 0.
    TwistUndefined,
    /// Adduction or pelvis list within 1e-3 rad of ±π/2.
    NearGimbal,
}

/// A flagged (not fatal) singular configuration at one feature entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degeneracy {
    pub entry: usize,
    pub kind: DegeneracyKind,
}
