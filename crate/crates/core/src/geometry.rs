//! Pinhole camera model and rigid transforms.
//!
//! Conventions used everywhere in this crate: right-handed coordinates,
//! cameras look along +z, image origin at the top-left with y pointing down,
//! and pixel centers at integer + 0.5. Poses are world-to-camera.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvsError};

const ROTATION_TOL: f64 = 1e-6;

/// Rigid body transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// True when the rotation block is orthonormal with determinant +1.
    pub fn is_rotation(&self) -> bool {
        let should_be_eye = self.rotation.transpose() * self.rotation;
        let eye_err = (should_be_eye - Matrix3::identity()).abs().max();
        eye_err < ROTATION_TOL && (self.rotation.determinant() - 1.0).abs() < ROTATION_TOL
    }

    /// Rotation about the given axis by `angle` radians.
    pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let a = axis.normalize();
        let (s, c) = angle.sin_cos();
        let one_c = 1.0 - c;
        Matrix3::new(
            c + a.x * a.x * one_c,
            a.x * a.y * one_c - a.z * s,
            a.x * a.z * one_c + a.y * s,
            a.y * a.x * one_c + a.z * s,
            c + a.y * a.y * one_c,
            a.y * a.z * one_c - a.x * s,
            a.z * a.x * one_c - a.y * s,
            a.z * a.y * one_c + a.x * s,
            c + a.z * a.z * one_c,
        )
    }
}

/// Pinhole camera: intrinsics, resolution, clip depths, world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub z_near: f64,
    pub z_far: f64,
    pub pose: RigidTransform,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        z_near: f64,
        z_far: f64,
        pose: RigidTransform,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            z_near,
            z_far,
            pose,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(SvsError::InvalidCamera {
                reason: reason.to_string(),
            })
        };
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return fail("focal lengths must be positive");
        }
        if self.width < 1 || self.height < 1 {
            return fail("resolution must be at least 1x1");
        }
        if !(0.0 < self.z_near && self.z_near < self.z_far) {
            return fail("need 0 < z_near < z_far");
        }
        if !self.pose.is_rotation() {
            return fail("pose rotation is not orthonormal with det +1");
        }
        Ok(())
    }

    /// Perspective projection of a camera-space point onto the image plane.
    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return Err(SvsError::BehindCamera { z: p.z });
        }
        Ok((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        ))
    }

    /// Inverse of [`Camera::project`] for a known depth.
    pub fn unproject_pixel(&self, u: f64, v: f64, z: f64) -> Result<Vector3<f64>> {
        if z <= 0.0 {
            return Err(SvsError::InvalidDepth { z });
        }
        Ok(Vector3::new(
            (u - self.cx) * z / self.fx,
            (v - self.cy) * z / self.fy,
            z,
        ))
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.apply(p)
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse().apply(p)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.inverse().translation
    }

    /// Optical axis direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.pose.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0)
    }

    /// World-to-camera pose looking from `eye` toward `target`.
    ///
    /// `up` is the world up direction; with the y-down convention of this
    /// crate the natural choice is `(0, -1, 0)`.
    pub fn look_at_pose(
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
    ) -> Result<RigidTransform> {
        let fwd = target - eye;
        if fwd.norm() < 1e-12 {
            return Err(SvsError::InvalidCamera {
                reason: "look_at eye and target coincide".into(),
            });
        }
        let z_axis = fwd.normalize();
        let x_axis = z_axis.cross(up);
        if x_axis.norm() < 1e-9 {
            return Err(SvsError::InvalidCamera {
                reason: "look_at direction parallel to up".into(),
            });
        }
        let x_axis = x_axis.normalize();
        let y_axis = z_axis.cross(&x_axis);
        let rotation = Matrix3::from_rows(&[
            x_axis.transpose(),
            y_axis.transpose(),
            z_axis.transpose(),
        ]);
        Ok(RigidTransform::new(rotation, -(rotation * eye)))
    }

    /// Same camera with its pose re-expressed after moving the world by `t`,
    /// i.e. the render of `{t(p)}` from the returned camera equals the render
    /// of `{p}` from `self`.
    pub fn with_world_transformed(&self, t: &RigidTransform) -> Camera {
        let mut cam = self.clone();
        cam.pose = self.pose.compose(&t.inverse());
        cam
    }
}

/// On-disk camera description. Field names are part of the CLI contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub z_near: f64,
    pub z_far: f64,
    /// Row-major 3x3 world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraJson {
    fn from(cam: &Camera) -> Self {
        let r = &cam.pose.rotation;
        CameraJson {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            z_near: cam.z_near,
            z_far: cam.z_far,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [
                cam.pose.translation.x,
                cam.pose.translation.y,
                cam.pose.translation.z,
            ],
        }
    }
}

impl TryFrom<&CameraJson> for Camera {
    type Error = SvsError;

    fn try_from(j: &CameraJson) -> Result<Camera> {
        let r = &j.rotation;
        let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let translation = Vector3::new(j.translation[0], j.translation[1], j.translation[2]);
        Camera::new(
            j.fx,
            j.fy,
            j.cx,
            j.cy,
            j.width,
            j.height,
            j.z_near,
            j.z_far,
            RigidTransform::new(rotation, translation),
        )
    }
}
