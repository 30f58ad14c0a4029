//! Elementary rotations and angle helpers used by the IK/FK chain.
//!
//! Body-local axes: x forward, y up, z lateral (pointing to the body's right).

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Maps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// `atan2` folded into (-π, π] (`atan2` may return exactly -π).
pub fn atan2_wrapped(y: f64, x: f64) -> f64 {
    wrap_angle(y.atan2(x))
}

/// Unsigned angle between two vectors in [0, π], stable near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Pelvis orientation angles. Composition is extrinsic Z (tilt), then X
/// (list), then Y (rotation): `R = Ry(rotation) · Rx(list) · Rz(tilt)`, so a
/// heading change about world up only moves `rotation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZxy {
    pub tilt: f64,
    pub list: f64,
    pub rotation: f64,
}

impl EulerZxy {
    pub fn to_matrix(&self) -> Mat3 {
        rot_y(self.rotation) * rot_x(self.list) * rot_z(self.tilt)
    }

    /// Decomposes a rotation matrix; `list` lands in [-π/2, π/2].
    pub fn from_matrix(r: &Mat3) -> Self {
        // third column = Ry(γ)·(0, -sin β, cos β)
        let sin_list = (-r[(1, 2)]).clamp(-1.0, 1.0);
        let cos_list = (r[(0, 2)].powi(2) + r[(2, 2)].powi(2)).sqrt();
        let list = sin_list.atan2(cos_list);
        let rotation = atan2_wrapped(r[(0, 2)], r[(2, 2)]);
        // second row = (cos β sin α, cos β cos α, -sin β)
        let tilt = atan2_wrapped(r[(1, 0)], r[(1, 1)]);
        EulerZxy {
            tilt,
            list,
            rotation,
        }
    }
}

/// Orthonormalizes the frame spanned by a lateral direction and an approximate
/// up direction. Columns are (forward, up, lateral). Returns `None` when the
/// inputs are degenerate.
pub fn frame_from_lateral_up(lateral: &Vec3, up_hint: &Vec3, eps: f64) -> Option<Mat3> {
    let lat_norm = lateral.norm();
    if lat_norm < eps {
        return None;
    }
    let lat = lateral / lat_norm;
    let up_raw = up_hint - lat * up_hint.dot(&lat);
    let up_norm = up_raw.norm();
    if up_norm < eps {
        return None;
    }
    let up = up_raw / up_norm;
    let forward = up.cross(&lat);
    Some(Mat3::from_columns(&[forward, up, lat]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5 - 4.0 * PI) + 0.5).abs() < 1e-12);
        assert_eq!(atan2_wrapped(-0.0, -1.0), PI);
    }

    #[test]
    fn elementary_rotations_follow_right_hand_rule() {
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        assert!((rot_z(PI / 2.0) * x - y).norm() < 1e-15);
        assert!((rot_x(PI / 2.0) * y - z).norm() < 1e-15);
        assert!((rot_y(PI / 2.0) * z - x).norm() < 1e-15);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let e = EulerZxy {
                tilt: rng.random_range(-3.0..3.0),
                list: rng.random_range(-1.5..1.5),
                rotation: rng.random_range(-3.0..3.0),
            };
            let back = EulerZxy::from_matrix(&e.to_matrix());
            assert!((back.tilt - e.tilt).abs() < 1e-12);
            assert!((back.list - e.list).abs() < 1e-12);
            assert!((back.rotation - e.rotation).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_between_matches_arccos_away_from_poles() {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.6, -0.8, 0.0);
        assert!((angle_between(&a, &b) - 0.6f64.acos()).abs() < 1e-15);
    }
}
