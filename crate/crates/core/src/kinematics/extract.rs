//! Inverse kinematics: joint positions to anatomical joint angles.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;

use super::rotation::{
    angle_between, atan2_wrapped, frame_from_lateral_up, rot_x, rot_y, rot_z, wrap_angle,
    EulerZxy, Mat3, Vec3,
};
use super::skeleton::{JointKind, Skeleton, EPS, FEATURE_DIM};
use super::types::{
    BodyFrame, Degeneracy, DegeneracyKind, FeatureSequence, MotionSequence, PoseFeatures,
};
use crate::error::{Error, Result};

const GIMBAL_MARGIN: f64 = 1e-3;

/// Two swing angles of a ball-and-socket or spinal joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingAngles {
    /// Flexion (ball-and-socket) or extension (spinal).
    pub sagittal: f64,
    /// Adduction (ball-and-socket) or lateral bending (spinal).
    pub frontal: f64,
    /// The segment had no sagittal-plane component.
    pub singular: bool,
}

/// Axial rotation about a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub angle: f64,
    /// The grandchild was collinear with the segment axis.
    pub undefined: bool,
}

fn frontal_angle(v: &Vec3, sagittal_norm: f64) -> (f64, bool) {
    if sagittal_norm < EPS {
        (v.z.signum() * FRAC_PI_2, true)
    } else {
        // sign(v_z)·arccos(v·v_xy / (|v| |v_xy|)) written in atan2 form
        (v.z.signum() * v.z.abs().atan2(sagittal_norm), false)
    }
}

/// Flexion/adduction of a child position expressed in the parent frame; the
/// neutral limb hangs along -y.
pub fn extract_ball_socket(child_in_parent: &Vec3) -> Result<SwingAngles> {
    let v = child_in_parent;
    if v.norm() < EPS {
        return Err(Error::DegeneratePose("zero-length ball-and-socket segment".into()));
    }
    let sagittal_norm = v.x.hypot(v.y);
    let flexion = if sagittal_norm < EPS {
        0.0
    } else {
        atan2_wrapped(v.x, -v.y)
    };
    let (frontal, singular) = frontal_angle(v, sagittal_norm);
    Ok(SwingAngles {
        sagittal: flexion,
        frontal,
        singular,
    })
}

/// Extension/bending of a spinal segment; the neutral segment points along +y.
pub fn extract_spinal(child_in_parent: &Vec3) -> Result<SwingAngles> {
    let v = child_in_parent;
    if v.norm() < EPS {
        return Err(Error::DegeneratePose("zero-length spinal segment".into()));
    }
    let sagittal_norm = v.x.hypot(v.y);
    let extension = if sagittal_norm < EPS {
        0.0
    } else {
        atan2_wrapped(v.x, v.y)
    };
    let (frontal, singular) = frontal_angle(v, sagittal_norm);
    Ok(SwingAngles {
        sagittal: extension,
        frontal,
        singular,
    })
}

/// Rotation taking the neutral -y direction onto the swung segment direction.
pub fn ball_socket_swing(flexion: f64, adduction: f64) -> Mat3 {
    rot_z(flexion) * rot_x(-adduction)
}

/// Rotation taking the neutral +y direction onto the swung segment direction.
pub fn spinal_swing(extension: f64, bending: f64) -> Mat3 {
    rot_z(-extension) * rot_x(bending)
}

/// Signed twist about the segment axis (local y of `swing_frame`) between the
/// propagated reference direction and the grandchild direction, both
/// projected onto the plane normal to the axis.
pub fn extract_axial_rotation(
    swing_frame: &Mat3,
    reference_local: &Vec3,
    child_to_grandchild: &Vec3,
) -> Twist {
    let axis: Vec3 = swing_frame.column(1).into();
    let g = child_to_grandchild;
    let g_perp = g - axis * g.dot(&axis);
    if g_perp.norm() < EPS {
        return Twist {
            angle: 0.0,
            undefined: true,
        };
    }
    let reference = swing_frame * reference_local;
    let angle = atan2_wrapped(reference.cross(&g_perp).dot(&axis), reference.dot(&g_perp));
    Twist {
        angle,
        undefined: false,
    }
}

/// Angle between adjacent segments in [0, π]; 0 is a straight limb.
pub fn extract_hinge(upper: &Vec3, lower: &Vec3) -> Result<f64> {
    if upper.norm() < EPS || lower.norm() < EPS {
        return Err(Error::DegeneratePose("zero-length hinge segment".into()));
    }
    Ok(angle_between(upper, lower))
}

fn position(frame: &[[f64; 3]], j: usize) -> Vec3 {
    Vec3::from(frame[j])
}

fn check_frame(frame: &[[f64; 3]], skeleton: &Skeleton) -> Result<()> {
    if frame.len() != skeleton.joint_count() {
        return Err(Error::DimensionMismatch {
            expected: skeleton.joint_count(),
            actual: frame.len(),
            context: "joints per frame",
        });
    }
    if frame.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidMotion("non-finite joint coordinate".into()));
    }
    Ok(())
}

/// Heading frame: lateral axis is the horizontal projection of
/// left-hip→right-hip, vertical is world up, forward = up × lateral.
pub fn build_body_frame(frame: &[[f64; 3]], skeleton: &Skeleton) -> Result<BodyFrame> {
    check_frame(frame, skeleton)?;
    let entry = skeleton
        .entry_of_kind(JointKind::PelvisOrientation)
        .expect("validated skeleton has a pelvis entry");
    let j = &skeleton.feature(entry).joints;
    let hips = position(frame, j[2]) - position(frame, j[1]);
    let lateral = Vec3::new(hips.x, 0.0, hips.z);
    let norm = lateral.norm();
    if norm < EPS {
        return Err(Error::DegeneratePose(
            "hips coincide in the horizontal plane".into(),
        ));
    }
    let lateral = lateral / norm;
    let up = Vec3::y();
    let forward = up.cross(&lateral);
    Ok(BodyFrame {
        rotation: Mat3::from_columns(&[forward, up, lateral]),
        origin: position(frame, j[0]),
    })
}

/// Result of per-frame extraction including flagged singularities and the
/// propagated segment frame of every joint.
#[derive(Debug, Clone)]
pub struct PoseExtraction {
    pub features: PoseFeatures,
    pub flags: Vec<Degeneracy>,
    pub segment_frames: Vec<Mat3>,
}

/// Extracts the 29-value feature vector from one frame of positions.
pub fn extract_pose_features(frame: &[[f64; 3]], skeleton: &Skeleton) -> Result<PoseFeatures> {
    extract_pose_detailed(frame, skeleton).map(|x| x.features)
}

pub fn extract_pose_detailed(frame: &[[f64; 3]], skeleton: &Skeleton) -> Result<PoseExtraction> {
    check_frame(frame, skeleton)?;
    let mut values = [0.0; FEATURE_DIM];
    let mut flags = Vec::new();
    let mut frames = vec![Mat3::identity(); skeleton.joint_count()];
    let parents = skeleton.parents();

    for (e, fj) in skeleton.features().iter().enumerate() {
        let slot = skeleton.slot(e);
        match fj.kind {
            JointKind::PelvisOrientation => {
                let j = &fj.joints;
                let lateral = position(frame, j[2]) - position(frame, j[1]);
                let up = position(frame, j[3]) - position(frame, j[0]);
                let measured = frame_from_lateral_up(&lateral, &up, EPS).ok_or_else(|| {
                    Error::DegeneratePose("hips coincide or spine is collinear with hips".into())
                })?;
                let r = measured * skeleton.pelvis_rest_frame().transpose();
                let euler = EulerZxy::from_matrix(&r);
                values[slot] = euler.tilt;
                values[slot + 1] = euler.list;
                values[slot + 2] = euler.rotation;
                if euler.list.abs() > FRAC_PI_2 - GIMBAL_MARGIN {
                    flags.push(Degeneracy {
                        entry: e,
                        kind: DegeneracyKind::NearGimbal,
                    });
                }
                frames[skeleton.root()] = r;
            }
            JointKind::PelvisTranslation => {
                let p = frame[fj.joints[0]];
                values[slot..slot + 3].copy_from_slice(&p);
            }
            _ => {}
        }
    }

    for &j in skeleton.order() {
        if j == skeleton.root() {
            continue;
        }
        let parent_frame = frames[parents[j] as usize];
        let Some(e) = skeleton.driver(j) else {
            frames[j] = parent_frame;
            continue;
        };
        let fj = skeleton.feature(e);
        let slot = skeleton.slot(e);
        let ctx = |err: Error| match err {
            Error::DegeneratePose(m) => Error::DegeneratePose(format!("{}: {m}", fj.name)),
            other => other,
        };
        let idx = &fj.joints;
        match fj.kind {
            JointKind::BallSocket | JointKind::Spinal3 | JointKind::Spinal2 => {
                let v = parent_frame.transpose() * (position(frame, idx[1]) - position(frame, idx[0]));
                let (swing_angles, swing) = if fj.kind == JointKind::BallSocket {
                    let a = extract_ball_socket(&v).map_err(ctx)?;
                    (a, ball_socket_swing(a.sagittal, a.frontal))
                } else {
                    let a = extract_spinal(&v).map_err(ctx)?;
                    (a, spinal_swing(a.sagittal, a.frontal))
                };
                values[slot] = swing_angles.sagittal;
                values[slot + 1] = swing_angles.frontal;
                if swing_angles.singular {
                    flags.push(Degeneracy {
                        entry: e,
                        kind: DegeneracyKind::SagittalProjection,
                    });
                } else if swing_angles.frontal.abs() > FRAC_PI_2 - GIMBAL_MARGIN {
                    flags.push(Degeneracy {
                        entry: e,
                        kind: DegeneracyKind::NearGimbal,
                    });
                }
                let swing_frame = parent_frame * swing;
                if fj.kind == JointKind::Spinal2 {
                    frames[j] = swing_frame;
                } else {
                    let twist = extract_axial_rotation(
                        &swing_frame,
                        &Vec3::from(fj.twist_reference),
                        &(position(frame, idx[2]) - position(frame, idx[1])),
                    );
                    if twist.undefined {
                        flags.push(Degeneracy {
                            entry: e,
                            kind: DegeneracyKind::TwistUndefined,
                        });
                    }
                    values[slot + 2] = twist.angle;
                    frames[j] = swing_frame * rot_y(twist.angle);
                }
            }
            JointKind::Hinge => {
                let upper = position(frame, idx[1]) - position(frame, idx[0]);
                let lower = position(frame, idx[2]) - position(frame, idx[1]);
                let raw = extract_hinge(&upper, &lower).map_err(ctx)?;
                let deviation = wrap_angle(raw - skeleton.hinge_rest_angle(e));
                values[slot] = deviation;
                frames[j] = parent_frame * rot_z(f64::from(fj.bend_sign) * deviation);
            }
            JointKind::PelvisOrientation | JointKind::PelvisTranslation => unreachable!(),
        }
    }

    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(PoseExtraction {
        features: PoseFeatures { values },
        flags,
        segment_frames: frames,
    })
}

/// Per-frame extraction; the first failing frame aborts with its index.
pub fn extract_sequence(motion: &MotionSequence, skeleton: &Skeleton) -> Result<FeatureSequence> {
    if motion.frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let per_frame: Vec<Result<PoseFeatures>> = motion
        .frames
        .par_iter()
        .map(|frame| extract_pose_features(frame, skeleton))
        .collect();
    let mut rows = Vec::with_capacity(per_frame.len());
    for (t, r) in per_frame.into_iter().enumerate() {
        rows.push(r.map_err(|e| Error::Frame {
            frame: t,
            source: Box::new(e),
        })?.values);
    }
    Ok(FeatureSequence {
        fps: motion.fps,
        rows,
    })
}
