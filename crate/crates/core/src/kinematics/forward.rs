//! Forward kinematics: joint angles back to world positions.

use super::extract::{ball_socket_swing, spinal_swing};
use super::rotation::{rot_y, rot_z, EulerZxy, Mat3, Vec3};
use super::skeleton::{JointKind, Skeleton, FEATURE_DIM};
use super::types::{FeatureSequence, MotionSequence};
use crate::error::{Error, Result};

/// Places every joint of one frame. Joints that are not driven by a feature
/// entry inherit their parent's segment frame and sit at their rest offset.
pub fn forward_pose(values: &[f64; FEATURE_DIM], skeleton: &Skeleton) -> Result<Vec<[f64; 3]>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidMotion(format!("feature {i} is not finite")));
    }
    let n = skeleton.joint_count();
    let root = skeleton.root();
    let mut pos = vec![Vec3::zeros(); n];
    let mut frames = vec![Mat3::identity(); n];

    for (e, fj) in skeleton.features().iter().enumerate() {
        let s = skeleton.slot(e);
        match fj.kind {
            JointKind::PelvisOrientation => {
                frames[root] = EulerZxy {
                    tilt: values[s],
                    list: values[s + 1],
                    rotation: values[s + 2],
                }
                .to_matrix();
            }
            JointKind::PelvisTranslation => {
                pos[root] = Vec3::new(values[s], values[s + 1], values[s + 2]);
            }
            _ => {}
        }
    }

    let parents = skeleton.parents();
    for &j in skeleton.order() {
        if j == root {
            continue;
        }
        let p = parents[j] as usize;
        pos[j] = pos[p] + frames[p] * skeleton.rest_offset(j);
        frames[j] = match skeleton.driver(j) {
            None => frames[p],
            Some(e) => {
                let fj = skeleton.feature(e);
                let s = skeleton.slot(e);
                match fj.kind {
                    JointKind::BallSocket => {
                        frames[p] * ball_socket_swing(values[s], values[s + 1]) * rot_y(values[s + 2])
                    }
                    JointKind::Spinal3 => {
                        frames[p] * spinal_swing(values[s], values[s + 1]) * rot_y(values[s + 2])
                    }
                    JointKind::Spinal2 => frames[p] * spinal_swing(values[s], values[s + 1]),
                    JointKind::Hinge => frames[p] * rot_z(f64::from(fj.bend_sign) * values[s]),
                    JointKind::PelvisOrientation | JointKind::PelvisTranslation => unreachable!(),
                }
            }
        };
    }
    Ok(pos.into_iter().map(Into::into).collect())
}

/// Reconstructs a motion from its feature rows.
pub fn forward_kinematics(features: &FeatureSequence, skeleton: &Skeleton) -> Result<MotionSequence> {
    if features.rows.is_empty() {
        return Err(Error::EmptySequence);
    }
    let frames = features
        .rows
        .iter()
        .enumerate()
        .map(|(t, row)| {
            forward_pose(row, skeleton).map_err(|e| Error::Frame {
                frame: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionSequence {
        fps: features.fps,
        frames,
    })
}
