//! Rigid transforms and quaternion helpers.
//!
//! Quaternions are stored and serialized in `(w, x, y, z)` order. A [`Pose`]
//! maps points from its own frame into the parent frame: `p_parent =
//! position + orientation * p_local`.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Builds a unit quaternion from `(w, x, y, z)` components, normalizing.
pub fn quat_wxyz(w: f64, x: f64, y: f64, z: f64) -> Quat {
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}

/// Components in `(w, x, y, z)` order.
pub fn quat_to_wxyz(q: &Quat) -> [f64; 4] {
    let c = q.quaternion();
    [c.w, c.i, c.j, c.k]
}

pub fn rot_x(angle: f64) -> Quat {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle)
}

pub fn rot_y(angle: f64) -> Quat {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle)
}

pub fn rot_z(angle: f64) -> Quat {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle)
}

/// Rotation by `angle` about an arbitrary (not necessarily unit) axis.
pub fn rot_axis(axis: &Vec3, angle: f64) -> Quat {
    match Unit::try_new(*axis, 1e-12) {
        Some(a) => UnitQuaternion::from_axis_angle(&a, angle),
        None => Quat::identity(),
    }
}

/// Rotation vector (axis * angle) with angle in `[0, pi]`.
pub fn rotation_vector(q: &Quat) -> Vec3 {
    let q = canonical(q);
    let c = q.quaternion();
    let v = Vector3::new(c.i, c.j, c.k);
    let s = v.norm();
    if s < 1e-15 {
        // small-angle limit of 2*atan2(s, w)/s
        return v * 2.0;
    }
    let angle = 2.0 * s.atan2(c.w);
    v * (angle / s)
}

/// Exponential map of a rotation vector.
pub fn from_rotation_vector(v: &Vec3) -> Quat {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Representative with non-negative scalar part.
pub fn canonical(q: &Quat) -> Quat {
    if q.quaternion().w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Renormalizes to unit length, removing accumulated drift.
pub fn renormalize(q: &Quat) -> Quat {
    UnitQuaternion::from_quaternion(q.into_inner())
}

/// Minimal rotation angle between two orientations, in `[0, pi]`.
///
/// Invariant under the double cover: `q` and `-q` are the same rotation.
pub fn geodesic_angle(q1: &Quat, q2: &Quat) -> f64 {
    let rel = q1.inverse() * q2;
    let c = rel.quaternion();
    let s = (c.i * c.i + c.j * c.j + c.k * c.k).sqrt();
    2.0 * s.atan2(c.w.abs())
}

/// Sign-aligned, renormalized component mean of a set of orientations.
///
/// Every quaternion is flipped into the hemisphere of the first one before
/// summing. Accurate for tightly clustered inputs (spread well under 90°).
pub fn average_quaternions(qs: &[Quat]) -> Result<Quat> {
    let first = qs.first().ok_or(Error::NoEstimates)?;
    let reference = first.into_inner();
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for q in qs {
        let c = q.into_inner();
        if c.dot(&reference) < 0.0 {
            acc -= c;
        } else {
            acc += c;
        }
    }
    if acc.norm() < 1e-12 {
        return Err(Error::NoEstimates);
    }
    Ok(UnitQuaternion::from_quaternion(acc))
}

/// Twist angle of `q` about `axis` (swing-twist decomposition), in `(-pi, pi]`.
pub fn twist_angle(q: &Quat, axis: &Vec3) -> f64 {
    let c = q.quaternion();
    let a = axis.normalize();
    let proj = c.i * a.x + c.j * a.y + c.k * a.z;
    let angle = 2.0 * proj.atan2(c.w);
    wrap_angle(angle)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Yaw (rotation about world z) of an orientation.
pub fn yaw_of(q: &Quat) -> f64 {
    twist_angle(q, &Vector3::z())
}

/// 3x3 rotation matrix whose columns are the rotated basis vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn from_quat(q: &Quat) -> Self {
        RotationMatrix(q.to_rotation_matrix().into_inner())
    }

    pub fn to_quat(&self) -> Quat {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        UnitQuaternion::from_rotation_matrix(&rot)
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

/// A rigid transform: translation in meters plus a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation: renormalize(&orientation),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), Quat::identity())
    }

    pub fn from_rotation(q: Quat) -> Self {
        Self::new(Vec3::zeros(), q)
    }

    /// Position plus a rotation about world z.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(Vec3::new(x, y, z), rot_z(yaw))
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self::new(-(inv * self.position), inv)
    }

    /// `self ∘ other`: `other` expressed in `self`'s frame, mapped to the parent.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose_poses(self, other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// Flattened `[x, y, z, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = quat_to_wxyz(&self.orientation);
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ]
    }
}

/// Composition `a ∘ b`.
pub fn compose_poses(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.position + a.orientation * b.position,
        a.orientation * b.orientation,
    )
}

/// `a⁻¹ ∘ b`: the pose of `b` expressed in `a`'s frame.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let inv = a.orientation.inverse();
    Pose::new(inv * (b.position - a.position), inv * b.orientation)
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            orientation: quat_to_wxyz(&self.orientation),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let [w, x, y, z] = r.orientation;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-9 || r.position.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("pose must be finite with a non-zero quaternion"));
        }
        // Stored quaternions are already unit length; skip renormalization when
        // they are so that values round-trip bit-exactly.
        let q = Quaternion::new(w, x, y, z);
        let orientation = if (norm - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Pose {
            position: Vec3::new(r.position[0], r.position[1], r.position[2]),
            orientation,
        })
    }
}

/// Serde helper for bare quaternions in `(w, x, y, z)` order.
pub mod serde_quat {
    use super::*;

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> std::result::Result<S::Ok, S::Error> {
        quat_to_wxyz(q).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Quat, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-9 {
            return Err(serde::de::Error::custom("degenerate quaternion"));
        }
        Ok(if (n - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        })
    }
}

/// Serde helper for 3-vectors as `[x, y, z]`.
pub mod serde_vec3 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> std::result::Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}
