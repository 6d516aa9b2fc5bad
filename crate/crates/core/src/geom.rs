//! Rigid poses, pinhole intrinsics and small SO(3) helpers shared by every stage.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rigid world-from-camera transform: a camera-frame point `x` maps to `R·x + t`.
///
/// Camera axes follow the usual vision convention: +x right, +y down, +z along
/// the optical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Gravity-aligned camera at `position` whose optical axis points along
    /// heading `yaw` (radians, counter-clockwise from +x in the world xy plane).
    pub fn from_position_yaw(position: Vec3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let forward = Vec3::new(c, s, 0.0);
        let right = Vec3::new(s, -c, 0.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        Self { rotation: Mat3::from_columns(&[right, down, forward]), translation: position }
    }

    /// Heading of the optical axis projected onto the world xy plane.
    pub fn yaw(&self) -> f64 {
        let f = self.rotation.column(2);
        wrap_angle(f[1].atan2(f[0]))
    }

    pub fn position(&self) -> Vec3 {
        self.translation
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn inverse_transform_point(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let e = (r.transpose() * r - Mat3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.orthonormality_error() <= tol
    }

    /// Geodesic rotation angle between two poses, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        so3_log(&(self.rotation.transpose() * other.rotation)).norm()
    }
}

/// Rodrigues exponential of an axis-angle vector.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    Rotation3::new(*w).into_inner()
}

/// Axis-angle vector of a rotation matrix.
pub fn so3_log(r: &Mat3) -> Vec3 {
    // The quaternion route stays finite when rounding pushes the trace past 3.
    UnitQuaternion::from_matrix(r).scaled_axis()
}

/// Projects a nearly-orthonormal matrix back onto SO(3).
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    UnitQuaternion::from_matrix(r).to_rotation_matrix().into_inner()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Absolute heading difference wrapped into [0, π].
pub fn yaw_distance(a: f64, b: f64) -> f64 {
    wrap_angle(b - a).abs()
}

/// Heading from `from` to `to` in the xy plane, in (−π, π].
pub fn yaw_towards(from: &Vec3, to: &Vec3) -> f64 {
    let d = to - from;
    wrap_angle(d.y.atan2(d.x))
}

/// Pinhole intrinsics. Pixel `(u, v)` with integer coordinates looks along
/// `((u − cx)/fx, (v − cy)/fy, 1)` in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    /// Square pixels, principal point at the image center `(W/2, H/2)`.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self { width, height, fx: focal, fy: focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err("camera dimensions must be positive".into());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unnormalized camera-frame ray with unit z component.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project_camera_point(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// True when a projected coordinate falls on an image pixel (rounded).
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}
