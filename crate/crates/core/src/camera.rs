//! Pinhole cameras and rigid camera-to-world poses.
//!
//! Camera axes follow the OpenCV convention: +X right, +Y down, +Z forward
//! out of the image plane. A pose maps camera coordinates to world
//! coordinates; its translation column is the camera center.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RIGID_TOL: f64 = 1e-6;

/// Stable identifier of a view within a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewId(pub u32);

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Self {
        CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            ));
        }
        if self.width < 16 || self.height < 16 {
            return Err(format!(
                "image must be at least 16x16 (got {}x{})",
                self.width, self.height
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Unit-length camera-frame direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Vector3<f64> {
        Vector3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Perspective projection of a camera-frame point with `z > 0`.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Rigid 4×4 camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    matrix: Matrix4<f64>,
}

impl CameraPose {
    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        check_rigid(&matrix).map_err(Error::Config)?;
        Ok(CameraPose { matrix })
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::Config(format!("pose needs 16 values, got {}", values.len())));
        }
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    /// Builds a pose from an orthonormal rotation and a camera center.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    /// Camera at `eye` looking toward `target`, with image-up roughly along `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at target coincides with eye".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::from_parts(rotation, eye)
    }

    pub fn identity() -> Self {
        CameraPose {
            matrix: Matrix4::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                out.push(self.matrix[(r, c)]);
            }
        }
        out
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Translation block; equals the camera center in world coordinates.
    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn with_translation(&self, t: Vector3<f64>) -> Self {
        let mut m = self.matrix;
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        CameraPose { matrix: m }
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.translation())
    }

    /// World-space unit direction through pixel `(x, y)`.
    pub fn pixel_ray(&self, intr: &CameraIntrinsics, x: usize, y: usize) -> Vector3<f64> {
        self.rotation() * intr.pixel_direction(x, y)
    }
}

fn check_rigid(m: &Matrix4<f64>) -> std::result::Result<(), String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("pose contains non-finite values".into());
    }
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(format!("pose bottom row must be (0,0,0,1), got {bottom:?}"));
    }
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let gram = r.transpose() * r - Matrix3::identity();
    if gram.amax() > RIGID_TOL {
        return Err(format!(
            "rotation block not orthonormal (deviation {:.3e})",
            gram.amax()
        ));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > RIGID_TOL {
        return Err(format!("rotation determinant {det:.6} is not +1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_points_forward_axis_at_target() {
        let pose = CameraPose::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::zeros(), Vector3::y()).unwrap();
        let fwd = pose.rotation().column(2).into_owned();
        assert!((fwd - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        // Image-down maps to world-down.
        let down = pose.rotation().column(1).into_owned();
        assert!((down - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn reflection_is_rejected() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = -1.0;
        assert!(CameraPose::from_matrix(m).is_err());
    }

    #[test]
    fn bad_bottom_row_is_rejected() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 0.5;
        assert!(CameraPose::from_matrix(m).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let pose = CameraPose::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.0, 0.5, 0.0), Vector3::y()).unwrap();
        let back = CameraPose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(pose, back);
    }

    #[test]
    fn projection_inverts_pixel_direction() {
        let intr = CameraIntrinsics::centered(50.0, 64, 48);
        let d = intr.pixel_direction(10, 30);
        let (u, v) = intr.project(&(d * 3.0));
        assert!((u - 10.5).abs() < 1e-9 && (v - 30.5).abs() < 1e-9);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::centered(50.0, 64, 64).validate().is_ok());
        assert!(CameraIntrinsics::centered(50.0, 8, 64).validate().is_err());
        assert!(CameraIntrinsics::centered(-1.0, 64, 64).validate().is_err());
        let mut off = CameraIntrinsics::centered(50.0, 64, 64);
        off.cx = 64.0;
        assert!(off.validate().is_err());
    }
}
