use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::pose::CameraPose;
use crate::error::{Error, Result};

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub s: f64,
    pub rotation: UnitQuaternion<f64>,
    pub t: Vector3<f64>,
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3Transform {
    pub fn new(s: f64, rotation: UnitQuaternion<f64>, t: Vector3<f64>) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::arg(format!("Sim3 scale must be positive and finite, got {s}")));
        }
        if !t.iter().all(|v| v.is_finite()) || !rotation.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite Sim3 component".into()));
        }
        Ok(Self { s, rotation, t })
    }

    pub fn identity() -> Self {
        Self {
            s: 1.0,
            rotation: UnitQuaternion::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Projects `m` onto SO(3) before building the transform.
    pub fn from_matrix(s: f64, m: &Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let rot = nalgebra::Rotation3::from_matrix(m);
        Self::new(s, UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.s + self.t
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Sim3Transform {
            s: self.s * other.s,
            rotation: self.rotation * other.rotation,
            t: self.rotation * other.t * self.s + self.t,
        }
    }

    pub fn inverse(&self) -> Sim3Transform {
        let r_inv = self.rotation.inverse();
        Sim3Transform {
            s: 1.0 / self.s,
            rotation: r_inv,
            t: -(r_inv * self.t) / self.s,
        }
    }

    /// Moves a camera: its center goes through the transform and its
    /// camera-to-world rotation is premultiplied by `R`.
    pub fn apply_pose(&self, pose: &CameraPose) -> CameraPose {
        let c2w = self.rotation * pose.cam_to_world();
        CameraPose::from_center(pose.frame_id, c2w, self.apply(&pose.center()))
    }

    /// Geodesic rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Deviation from identity: (|s − 1|, rotation angle, ‖t‖).
    pub fn distance_from_identity(&self) -> (f64, f64, f64) {
        ((self.s - 1.0).abs(), self.rotation_angle(), self.t.norm())
    }
}

#[derive(Serialize, Deserialize)]
struct Sim3Json {
    s: f64,
    /// w, x, y, z
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for Sim3Transform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        Sim3Json {
            s: self.s,
            q: [q.w, q.i, q.j, q.k],
            t: [self.t.x, self.t.y, self.t.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Sim3Transform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Sim3Json::deserialize(deserializer)?;
        let q = Quaternion::new(raw.q[0], raw.q[1], raw.q[2], raw.q[3]);
        if q.norm() < 1e-12 {
            return Err(serde::de::Error::custom("zero quaternion in sim3"));
        }
        Sim3Transform::new(raw.s, UnitQuaternion::from_quaternion(q), Vector3::from(raw.t))
            .map_err(serde::de::Error::custom)
    }
}
