//! Skeleton definitions: joint tree, rest offsets and the 14 feature joints.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::rotation::{angle_between, frame_from_lateral_up, Mat3, Vec3};
use crate::error::{Error, Result};

/// Number of feature joints (image bands).
pub const FEATURE_JOINTS: usize = 14;
/// Length of the per-frame pose feature vector.
pub const FEATURE_DIM: usize = 29;

pub(crate) const EPS: f64 = 1e-8;

const DEFAULT_SKELETON_JSON: &str = include_str!("../../data/smpl22_skeleton.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    PelvisOrientation,
    PelvisTranslation,
    BallSocket,
    Hinge,
    Spinal3,
    Spinal2,
}

impl JointKind {
    pub fn dof(self) -> usize {
        match self {
            JointKind::PelvisOrientation
            | JointKind::PelvisTranslation
            | JointKind::BallSocket
            | JointKind::Spinal3 => 3,
            JointKind::Spinal2 => 2,
            JointKind::Hinge => 1,
        }
    }

    /// Number of skeleton joint indices the entry references.
    fn source_count(self) -> usize {
        match self {
            JointKind::PelvisOrientation => 4,
            JointKind::PelvisTranslation => 1,
            JointKind::BallSocket | JointKind::Hinge | JointKind::Spinal3 => 3,
            JointKind::Spinal2 => 2,
        }
    }

    fn default_labels(self) -> &'static [&'static str] {
        match self {
            JointKind::PelvisOrientation => &["tilt", "list", "rotation"],
            JointKind::PelvisTranslation => &["tx", "ty", "tz"],
            JointKind::BallSocket => &["flexion", "adduction", "rotation"],
            JointKind::Hinge => &["bending"],
            JointKind::Spinal3 => &["extension", "bending", "rotation"],
            JointKind::Spinal2 => &["flexion", "adduction"],
        }
    }
}

/// One modeled joint and the skeleton joints it is measured from.
///
/// `joints` layout by kind:
/// - pelvis_orientation: `[pelvis, left_hip, right_hip, spine]`
/// - pelvis_translation: `[pelvis]`
/// - ball_socket / spinal3: `[joint, child, grandchild]`
/// - hinge: `[upper_start, joint, child]`
/// - spinal2: `[joint, child]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureJoint {
    pub name: String,
    pub kind: JointKind,
    pub joints: Vec<usize>,
    pub dof: usize,
    /// Hinge bend direction in the parent segment's sagittal plane:
    /// +1 bends toward local +x (forward), -1 toward -x.
    #[serde(default = "default_bend_sign")]
    pub bend_sign: i8,
    /// Zero-twist direction in the swing frame, orthogonal to local y.
    #[serde(default = "default_twist_reference")]
    pub twist_reference: [f64; 3],
    #[serde(default)]
    pub labels: Vec<String>,
}

fn default_bend_sign() -> i8 {
    1
}

fn default_twist_reference() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDefinition {
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i32>,
    pub rest_offsets: Vec<[f64; 3]>,
    pub feature_joints: Vec<FeatureJoint>,
}

impl SkeletonDefinition {
    pub fn from_json_str(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// A validated skeleton with derived lookup tables.
#[derive(Debug, Clone)]
pub struct Skeleton {
    def: SkeletonDefinition,
    root: usize,
    order: Vec<usize>,
    /// Feature entry that owns each joint's segment frame.
    driver: Vec<Option<usize>>,
    /// Offset of each entry inside the 29-vector.
    slots: Vec<usize>,
    /// Hinge angle measured on the rest pose, per entry (0 for non-hinges).
    hinge_rest: Vec<f64>,
    /// Pelvis frame measured on the rest pose.
    pelvis_rest: Mat3,
    labels: Vec<String>,
}

impl Skeleton {
    /// The bundled 22-joint SMPL-like skeleton.
    pub fn smpl22() -> Self {
        let def = SkeletonDefinition::from_json_str(DEFAULT_SKELETON_JSON)
            .expect("bundled skeleton parses");
        Skeleton::new(def).expect("bundled skeleton is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Skeleton::new(SkeletonDefinition::load(path)?)
    }

    pub fn new(def: SkeletonDefinition) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSkeleton(msg));
        let n = def.joint_names.len();
        if n == 0 {
            return bad("no joints".into());
        }
        if def.parent_index.len() != n || def.rest_offsets.len() != n {
            return bad(format!(
                "{} names, {} parents, {} offsets",
                n,
                def.parent_index.len(),
                def.rest_offsets.len()
            ));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| def.parent_index[j] == -1).collect();
        if roots.len() != 1 {
            return bad(format!("expected exactly one root, found {}", roots.len()));
        }
        let root = roots[0];
        for (j, &p) in def.parent_index.iter().enumerate() {
            if p != -1 && (p < 0 || p as usize >= n || p as usize == j) {
                return bad(format!("joint {j} has invalid parent {p}"));
            }
        }
        if def.rest_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite rest offset".into());
        }

        // topological order; a cycle leaves joints unvisited
        let mut children = vec![Vec::new(); n];
        for (j, &p) in def.parent_index.iter().enumerate() {
            if p >= 0 {
                children[p as usize].push(j);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(j) = stack.pop() {
            order.push(j);
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != n {
            return bad("parent_index contains a cycle".into());
        }

        if def.feature_joints.len() != FEATURE_JOINTS {
            return bad(format!(
                "expected {FEATURE_JOINTS} feature joints, found {}",
                def.feature_joints.len()
            ));
        }
        let mut slots = Vec::with_capacity(FEATURE_JOINTS);
        let mut total = 0;
        let mut driver = vec![None; n];
        let mut labels = Vec::with_capacity(FEATURE_DIM);
        let mut saw_orientation = false;
        for (e, fj) in def.feature_joints.iter().enumerate() {
            if fj.dof != fj.kind.dof() {
                return bad(format!(
                    "feature `{}`: kind {:?} has {} dof, declared {}",
                    fj.name,
                    fj.kind,
                    fj.kind.dof(),
                    fj.dof
                ));
            }
            if fj.joints.len() != fj.kind.source_count() {
                let what = if fj.kind == JointKind::BallSocket && fj.joints.len() == 2 {
                    "ball_socket needs a grandchild joint".to_string()
                } else {
                    format!("needs {} joint indices", fj.kind.source_count())
                };
                return bad(format!("feature `{}`: {what}", fj.name));
            }
            if let Some(&j) = fj.joints.iter().find(|&&j| j >= n) {
                return bad(format!("feature `{}`: joint index {j} out of range", fj.name));
            }
            if fj.bend_sign != 1 && fj.bend_sign != -1 {
                return bad(format!("feature `{}`: bend_sign must be ±1", fj.name));
            }
            let r = Vec3::from(fj.twist_reference);
            if (r.norm() - 1.0).abs() > 1e-9 || r.y.abs() > 1e-9 {
                return bad(format!(
                    "feature `{}`: twist_reference must be a unit vector with y = 0",
                    fj.name
                ));
            }
            let owned = match fj.kind {
                JointKind::PelvisOrientation => {
                    if fj.joints[0] != root {
                        return bad("pelvis_orientation must reference the root".into());
                    }
                    saw_orientation = true;
                    Some(root)
                }
                JointKind::PelvisTranslation => None,
                JointKind::BallSocket | JointKind::Spinal3 | JointKind::Spinal2 => {
                    Some(fj.joints[0])
                }
                JointKind::Hinge => Some(fj.joints[1]),
            };
            if let Some(j) = owned {
                if driver[j].is_some() {
                    return bad(format!("joint {j} driven by two feature entries"));
                }
                driver[j] = Some(e);
            }
            slots.push(total);
            total += fj.dof;
            let defaults = fj.kind.default_labels();
            for d in 0..fj.dof {
                labels.push(
                    fj.labels
                        .get(d)
                        .cloned()
                        .unwrap_or_else(|| format!("{}_{}", fj.name.replace(' ', "_"), defaults[d])),
                );
            }
        }
        let parent_of = |j: usize| def.parent_index[j];
        let descends = |mut j: usize, ancestor: usize| {
            while def.parent_index[j] >= 0 {
                j = def.parent_index[j] as usize;
                if j == ancestor {
                    return true;
                }
            }
            false
        };
        for fj in &def.feature_joints {
            let j = &fj.joints;
            let ok = match fj.kind {
                JointKind::PelvisOrientation => j[1..].iter().all(|&c| descends(c, j[0])),
                JointKind::PelvisTranslation => true,
                JointKind::BallSocket => {
                    parent_of(j[1]) == j[0] as i32 && parent_of(j[2]) == j[1] as i32
                }
                JointKind::Spinal3 => parent_of(j[1]) == j[0] as i32 && descends(j[2], j[1]),
                JointKind::Spinal2 => parent_of(j[1]) == j[0] as i32,
                JointKind::Hinge => {
                    parent_of(j[1]) == j[0] as i32 && parent_of(j[2]) == j[1] as i32
                }
            };
            if !ok {
                return bad(format!(
                    "feature `{}`: joints {:?} do not follow the parent chain",
                    fj.name, fj.joints
                ));
            }
        }
        if total != FEATURE_DIM {
            return bad(format!("dof sum is {total}, expected {FEATURE_DIM}"));
        }
        if !saw_orientation {
            return bad("missing pelvis_orientation entry".into());
        }

        let offset = |j: usize| Vec3::from(def.rest_offsets[j]);
        let mut hinge_rest = vec![0.0; FEATURE_JOINTS];
        let mut pelvis_rest = Mat3::identity();
        for (e, fj) in def.feature_joints.iter().enumerate() {
            match fj.kind {
                JointKind::Hinge => {
                    let upper = offset(fj.joints[1]);
                    let lower = offset(fj.joints[2]);
                    if upper.norm() < EPS || lower.norm() < EPS {
                        return bad(format!("feature `{}`: zero-length rest segment", fj.name));
                    }
                    hinge_rest[e] = angle_between(&upper, &lower);
                }
                JointKind::PelvisOrientation => {
                    let lateral = offset(fj.joints[2]) - offset(fj.joints[1]);
                    let up = offset(fj.joints[3]);
                    pelvis_rest = frame_from_lateral_up(&lateral, &up, EPS).ok_or_else(|| {
                        Error::InvalidSkeleton("degenerate rest pelvis frame".into())
                    })?;
                }
                _ => {}
            }
        }

        Ok(Skeleton {
            def,
            root,
            order,
            driver,
            slots,
            hinge_rest,
            pelvis_rest,
            labels,
        })
    }

    pub fn definition(&self) -> &SkeletonDefinition {
        &self.def
    }

    pub fn joint_count(&self) -> usize {
        self.def.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.def.joint_names
    }

    pub fn parents(&self) -> &[i32] {
        &self.def.parent_index
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Joints ordered parents-first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn features(&self) -> &[FeatureJoint] {
        &self.def.feature_joints
    }

    pub fn feature(&self, entry: usize) -> &FeatureJoint {
        &self.def.feature_joints[entry]
    }

    pub fn driver(&self, joint: usize) -> Option<usize> {
        self.driver[joint]
    }

    /// Index of the entry's first value inside the 29-vector.
    pub fn slot(&self, entry: usize) -> usize {
        self.slots[entry]
    }

    /// Degrees of freedom per feature entry, in band order.
    pub fn dofs(&self) -> Vec<usize> {
        self.def.feature_joints.iter().map(|f| f.dof).collect()
    }

    pub fn hinge_rest_angle(&self, entry: usize) -> f64 {
        self.hinge_rest[entry]
    }

    pub fn pelvis_rest_frame(&self) -> &Mat3 {
        &self.pelvis_rest
    }

    pub fn rest_offset(&self, joint: usize) -> Vec3 {
        Vec3::from(self.def.rest_offsets[joint])
    }

    /// Column labels of the 29-vector.
    pub fn feature_labels(&self) -> &[String] {
        &self.labels
    }

    pub(crate) fn entry_of_kind(&self, kind: JointKind) -> Option<usize> {
        self.def.feature_joints.iter().position(|f| f.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_skeleton_is_valid() {
        let sk = Skeleton::smpl22();
        assert_eq!(sk.joint_count(), 22);
        assert_eq!(sk.dofs().iter().sum::<usize>(), FEATURE_DIM);
        assert_eq!(sk.feature_labels().len(), FEATURE_DIM);
        assert_eq!(sk.feature_labels()[0], "pelvis_tilt");
        assert_eq!(sk.feature_labels()[28], "neck_adduction");
        assert!((sk.pelvis_rest_frame() - Mat3::identity()).norm() < 1e-15);
        assert_eq!(sk.hinge_rest_angle(4), 0.0);
        assert!(sk.hinge_rest_angle(6) > 1.0);
    }

    #[test]
    fn rejects_two_roots() {
        let mut def = Skeleton::smpl22().definition().clone();
        def.parent_index[3] = -1;
        assert!(matches!(Skeleton::new(def), Err(Error::InvalidSkeleton(_))));
    }

    #[test]
    fn rejects_cycle() {
        let mut def = Skeleton::smpl22().definition().clone();
        // 4 -> 7 -> 4
        def.parent_index[4] = 7;
        assert!(matches!(Skeleton::new(def), Err(Error::InvalidSkeleton(_))));
    }

    #[test]
    fn rejects_wrong_dof_sum() {
        let mut def = Skeleton::smpl22().definition().clone();
        def.feature_joints.pop();
        assert!(Skeleton::new(def).is_err());
    }

    #[test]
    fn ball_socket_requires_grandchild() {
        let mut def = Skeleton::smpl22().definition().clone();
        def.feature_joints[2].joints.pop();
        let err = Skeleton::new(def).unwrap_err().to_string();
        assert!(err.contains("grandchild"), "{err}");
    }
}
