//! Joint-angle features from 3D joint positions, and the inverse mapping.
//!
//! Features are measured in hierarchically propagated segment frames rooted
//! at the pelvis, so every angle is independent of where the body stands.
//! The pelvis orientation uses extrinsic Z-X-Y angles of the pelvis frame
//! relative to its rest pose; the translation dims hold the pelvis position in
//! world coordinates.

mod extract;
mod forward;
pub mod io;
pub mod rotation;
mod skeleton;
mod types;

pub use extract::{
    ball_socket_swing, build_body_frame, extract_axial_rotation, extract_ball_socket,
    extract_hinge, extract_pose_detailed, extract_pose_features, extract_sequence,
    extract_spinal, spinal_swing, PoseExtraction, SwingAngles, Twist,
};
pub use forward::{forward_kinematics, forward_pose};
pub use skeleton::{
    FeatureJoint, JointKind, Skeleton, SkeletonDefinition, FEATURE_DIM, FEATURE_JOINTS,
};
pub use types::{
    BodyFrame, Degeneracy, DegeneracyKind, FeatureSequence, MotionSequence, PoseFeatures,
};

use rand::Rng;
use std::f64::consts::PI;

/// Draws a pose whose features survive an FK → IK round trip: swings stay away
/// from the gimbal poles and hinges stay bent enough that parent twists are
/// observable.
pub fn sample_reachable_pose<R: Rng + ?Sized>(rng: &mut R, skeleton: &Skeleton) -> [f64; FEATURE_DIM] {
    let mut v = [0.0; FEATURE_DIM];
    for (e, fj) in skeleton.features().iter().enumerate() {
        let s = skeleton.slot(e);
        match fj.kind {
            JointKind::PelvisOrientation => {
                v[s] = rng.random_range(-0.6..0.6);
                v[s + 1] = rng.random_range(-0.6..0.6);
                v[s + 2] = rng.random_range(-PI + 1e-6..PI);
            }
            JointKind::PelvisTranslation => {
                v[s] = rng.random_range(-2.0..2.0);
                v[s + 1] = rng.random_range(0.7..1.1);
                v[s + 2] = rng.random_range(-2.0..2.0);
            }
            JointKind::BallSocket => {
                v[s] = rng.random_range(-1.2..1.2);
                v[s + 1] = rng.random_range(-1.0..1.0);
                v[s + 2] = rng.random_range(-1.5..1.5);
            }
            JointKind::Hinge => {
                let total = rng.random_range(0.2..2.2);
                v[s] = total - skeleton.hinge_rest_angle(e);
            }
            JointKind::Spinal3 => {
                v[s] = rng.random_range(-0.6..0.6);
                v[s + 1] = rng.random_range(-0.5..0.5);
                v[s + 2] = rng.random_range(-0.8..0.8);
            }
            JointKind::Spinal2 => {
                v[s] = rng.random_range(-0.6..0.6);
                v[s + 1] = rng.random_range(-0.5..0.5);
            }
        }
    }
    v
}

/// Features of the skeleton's rest pose placed with the pelvis at `origin`.
pub fn rest_features(skeleton: &Skeleton, origin: [f64; 3]) -> [f64; FEATURE_DIM] {
    let mut v = [0.0; FEATURE_DIM];
    if let Some(e) = skeleton
        .features()
        .iter()
        .position(|f| f.kind == JointKind::PelvisTranslation)
    {
        let s = skeleton.slot(e);
        v[s..s + 3].copy_from_slice(&origin);
    }
    v
}
