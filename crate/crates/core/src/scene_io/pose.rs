use nalgebra::{Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Rigid camera pose in the world-to-camera convention of SfM text output:
/// `x_cam = R * x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub frame_id: u32,
    pub q: UnitQuaternion<f64>,
    pub t: Vector3<f64>,
}

impl CameraPose {
    pub fn new(frame_id: u32, q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self { frame_id, q, t }
    }

    /// Builds a pose from a camera-to-world rotation and a camera center.
    pub fn from_center(frame_id: u32, cam_to_world: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        let q = cam_to_world.inverse();
        let t = -(q * center);
        Self { frame_id, q, t }
    }

    /// `C = -Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.q.inverse() * self.t)
    }

    pub fn cam_to_world(&self) -> UnitQuaternion<f64> {
        self.q.inverse()
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        self.q.to_rotation_matrix()
    }

    /// Maps a world point into this camera's frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.q * p + self.t
    }
}

/// Camera center of a pose, `C = -Rᵀ t`.
pub fn camera_center(pose: &CameraPose) -> Vector3<f64> {
    pose.center()
}

/// Ordered camera poses of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub block_id: u32,
    poses: Vec<CameraPose>,
}

impl Trajectory {
    /// Fails unless frame ids are strictly increasing and every center is finite.
    pub fn new(block_id: u32, poses: Vec<CameraPose>) -> Result<Self> {
        for w in poses.windows(2) {
            if w[1].frame_id <= w[0].frame_id {
                return Err(Error::data(format!(
                    "frame ids not strictly increasing: {} followed by {}",
                    w[0].frame_id, w[1].frame_id
                )));
            }
        }
        if let Some(p) = poses.iter().find(|p| !p.center().iter().all(|v| v.is_finite())) {
            return Err(Error::data(format!("non-finite camera center for frame {}", p.frame_id)));
        }
        Ok(Self { block_id, poses })
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(CameraPose::center).collect()
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.poses.iter().map(|p| p.frame_id).collect()
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.poses.first().map(|p| p.frame_id)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.poses.last().map(|p| p.frame_id)
    }

    pub fn pose(&self, frame_id: u32) -> Option<&CameraPose> {
        self.poses
            .binary_search_by_key(&frame_id, |p| p.frame_id)
            .ok()
            .map(|i| &self.poses[i])
    }

    /// Poses whose frame id lies in `[start, end]`.
    pub fn range(&self, start: u32, end: u32) -> &[CameraPose] {
        let lo = self.poses.partition_point(|p| p.frame_id < start);
        let hi = self.poses.partition_point(|p| p.frame_id <= end);
        &self.poses[lo..hi.max(lo)]
    }

    /// Mean distance between successive camera centers.
    pub fn mean_step_length(&self) -> Result<f64> {
        if self.poses.len() < 2 {
            return Err(Error::data("at least 2 poses are required for a step length"));
        }
        let centers = self.centers();
        let total: f64 = centers.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Ok(total / (centers.len() - 1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_pose_centers() {
        let p = CameraPose::new(0, UnitQuaternion::identity(), Vector3::zeros());
        assert_eq!(camera_center(&p), Vector3::zeros());
        let p = CameraPose::new(0, UnitQuaternion::identity(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(camera_center(&p), Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn rotated_pose_center_matches_matrix_oracle() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let p = CameraPose::new(0, q, Vector3::new(1.0, 0.0, 0.0));
        // R for +90° about z, written out by hand.
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let t = Vector3::new(1.0, 0.0, 0.0);
        let mut oracle = Vector3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                oracle[i] -= r[(j, i)] * t[j];
            }
        }
        assert_abs_diff_eq!(p.center(), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(p.center(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn pose_maps_own_center_to_origin() {
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let p = CameraPose::new(4, q, Vector3::new(-3.0, 0.5, 7.0));
        assert!(p.transform_point(&p.center()).norm() < 1e-9);
        let back = CameraPose::from_center(4, p.cam_to_world(), p.center());
        assert_abs_diff_eq!(back.t, p.t, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_rejects_unordered_frames() {
        let pose = |id| CameraPose::new(id, UnitQuaternion::identity(), Vector3::zeros());
        assert!(Trajectory::new(0, vec![pose(2), pose(1)]).is_err());
        assert!(Trajectory::new(0, vec![pose(1), pose(1)]).is_err());
        let traj = Trajectory::new(0, vec![pose(1), pose(3), pose(7)]).unwrap();
        assert_eq!(traj.range(2, 7).len(), 2);
        assert_eq!(traj.pose(3).map(|p| p.frame_id), Some(3));
        assert!(traj.pose(4).is_none());
    }

    #[test]
    fn step_length_needs_two_poses() {
        let pose = |id| CameraPose::new(id, UnitQuaternion::identity(), Vector3::zeros());
        assert!(Trajectory::new(0, vec![pose(1)]).unwrap().mean_step_length().is_err());
    }
}
