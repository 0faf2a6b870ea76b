//! Frames, rotations, pinhole cameras and the pixel-to-plane inverse projection.
//!
//! World frame is ENU with `Z = 0` at the water surface. Camera frames use
//! `+z` along the optical axis, `+x` image-right and `+y` image-down.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_angle, Real};

/// Margin kept from `|pitch| = pi/2` wherever Euler rates are needed.
pub const PITCH_GUARD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point lies behind the camera (optical-axis depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("ray is parallel to the target plane")]
    RayParallelToPlane,
    #[error("plane intersection lies behind the camera (s = {s})")]
    IntersectionBehindCamera { s: f64 },
    #[error("pitch {pitch} rad is within the singularity guard")]
    PitchSingularity { pitch: f64 },
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
}

/// A point in the ENU world frame, metres.
pub type WorldPoint<T> = Point3<T>;

/// Roll, pitch and yaw in radians, each wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles<T: Real> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
}

impl<T: Real> EulerAngles<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Self {
        Self {
            roll: wrap_angle(roll),
            pitch: wrap_angle(pitch),
            yaw: wrap_angle(yaw),
        }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn to_rotation(&self) -> RotationMatrix<T> {
        rotation_from_euler(self)
    }

    /// Fails when pitch is within [`PITCH_GUARD`] of +-pi/2.
    pub fn check_pitch(&self) -> Result<(), GeometryError> {
        if self.pitch.abs() > T::FRAC_PI_2() - T::lit(PITCH_GUARD) {
            return Err(GeometryError::PitchSingularity {
                pitch: self.pitch.as_f64(),
            });
        }
        Ok(())
    }
}

/// Proper rotation matrix. For camera and body orientations it is stored
/// world-from-local.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix<T: Real>(Matrix3<T>);

impl<T: Real> RotationMatrix<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix, checking orthonormality and `det = +1` within `tol`.
    pub fn from_matrix(m: Matrix3<T>, tol: T) -> Option<Self> {
        let r = Self(m);
        r.is_proper(tol).then_some(r)
    }

    /// Wraps without checking. Callers guarantee orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<T>) -> Vector3<T> {
        self.0 * v
    }

    pub fn is_proper(&self, tol: T) -> bool {
        let gram = self.0.transpose() * self.0 - Matrix3::identity();
        gram.iter().all(|e| e.abs() <= tol) && (self.0.determinant() - T::one()).abs() <= tol
    }

    /// Camera looking straight down: camera x to world +X, y to world -Y, z to world -Z.
    pub fn looking_down() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self(Matrix3::new(o, z, z, z, -o, z, z, z, -o))
    }

    /// Body-from-camera rotation for a forward camera (body +x forward, +z up)
    /// pitched down by `tilt` radians.
    pub fn forward_camera(tilt: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        // camera x -> body -y, camera y -> body -z, camera z -> body +x
        let level = Matrix3::new(z, z, o, -o, z, z, z, -o, z);
        // positive tilt rotates the optical axis towards body -z
        let (s, c) = tilt.sin_cos();
        let pitch_down = Matrix3::new(c, z, s, z, o, z, -s, z, c);
        Self(pitch_down * level)
    }
}

/// World-from-body rotation `Rz(yaw) * Ry(pitch) * Rx(roll)` (intrinsic Z-Y-X).
pub fn rotation_from_euler<T: Real>(angles: &EulerAngles<T>) -> RotationMatrix<T> {
    let [rz, ry, rx] = elementary_rotations(angles);
    RotationMatrix(rz * ry * rx)
}

fn elementary_rotations<T: Real>(a: &EulerAngles<T>) -> [Matrix3<T>; 3] {
    let (o, z) = (T::one(), T::zero());
    let (sr, cr) = a.roll.sin_cos();
    let (sp, cp) = a.pitch.sin_cos();
    let (sy, cy) = a.yaw.sin_cos();
    [
        Matrix3::new(cy, -sy, z, sy, cy, z, z, z, o),
        Matrix3::new(cp, z, sp, z, o, z, -sp, z, cp),
        Matrix3::new(o, z, z, z, cr, -sr, z, sr, cr),
    ]
}

/// Partial derivatives of [`rotation_from_euler`] with respect to roll, pitch and yaw.
pub fn rotation_partials<T: Real>(a: &EulerAngles<T>) -> [Matrix3<T>; 3] {
    let z = T::zero();
    let [rz, ry, rx] = elementary_rotations(a);
    let (sr, cr) = a.roll.sin_cos();
    let (sp, cp) = a.pitch.sin_cos();
    let (sy, cy) = a.yaw.sin_cos();
    let drx = Matrix3::new(z, z, z, z, -sr, -cr, z, cr, -sr);
    let dry = Matrix3::new(-sp, z, cp, z, z, z, -cp, z, -sp);
    let drz = Matrix3::new(-sy, -cy, z, cy, -sy, z, z, z, z);
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

/// Maps body angular rates to Euler angle rates.
pub fn euler_rate_matrix<T: Real>(a: &EulerAngles<T>) -> Result<Matrix3<T>, GeometryError> {
    a.check_pitch()?;
    let (o, z) = (T::one(), T::zero());
    let (sr, cr) = a.roll.sin_cos();
    let (tp, cp) = (a.pitch.tan(), a.pitch.cos());
    Ok(Matrix3::new(
        o,
        sr * tp,
        cr * tp,
        z,
        cr,
        -sr,
        z,
        sr / cp,
        cr / cp,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord<T> {
    pub x: T,
    pub y: T,
}

impl<T> PixelCoord<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

/// Ideal pinhole intrinsics, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self, GeometryError> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(GeometryError::InvalidIntrinsics {
                fx: fx.as_f64(),
                fy: fy.as_f64(),
            });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (o, z) = (T::one(), T::zero());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    /// `K^-1 [x, y, 1]^T`, written out for the upper-triangular K.
    pub fn unproject(&self, px: &PixelCoord<T>) -> Vector3<T> {
        Vector3::new(
            (px.x - self.cx) / self.fx,
            (px.y - self.cy) / self.fy,
            T::one(),
        )
    }
}

/// Intrinsics plus world pose of the camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    pub position: WorldPoint<T>,
    /// World-from-camera.
    pub orientation: RotationMatrix<T>,
}

impl<T: Real> CameraModel<T> {
    pub fn new(
        intrinsics: CameraIntrinsics<T>,
        position: WorldPoint<T>,
        orientation: RotationMatrix<T>,
    ) -> Self {
        Self {
            intrinsics,
            position,
            orientation,
        }
    }

    /// Camera at `position` with its optical axis pointing to world -Z.
    pub fn looking_down(intrinsics: CameraIntrinsics<T>, position: WorldPoint<T>) -> Self {
        Self::new(intrinsics, position, RotationMatrix::looking_down())
    }

    /// Camera rigidly mounted on a body at `body_position` with world-from-body
    /// rotation `body_rotation`. `offset` and `body_from_camera` describe the mount.
    pub fn mounted(
        intrinsics: CameraIntrinsics<T>,
        body_position: &WorldPoint<T>,
        body_rotation: &RotationMatrix<T>,
        offset: &Vector3<T>,
        body_from_camera: &RotationMatrix<T>,
    ) -> Self {
        Self::new(
            intrinsics,
            body_position + body_rotation.rotate(offset),
            body_rotation.compose(body_from_camera),
        )
    }

    /// Point expressed in the camera frame.
    pub fn to_camera_frame(&self, point: &WorldPoint<T>) -> Vector3<T> {
        self.orientation.matrix().tr_mul(&(point - self.position))
    }

    pub fn project(&self, point: &WorldPoint<T>) -> Result<PixelCoord<T>, GeometryError> {
        project(self, point)
    }

    pub fn pixel_ray(&self, px: &PixelCoord<T>) -> Vector3<T> {
        pixel_ray(self, px)
    }

    pub fn inverse_project(
        &self,
        px: &PixelCoord<T>,
        z_obj: T,
    ) -> Result<WorldPoint<T>, GeometryError> {
        inverse_project(self, px, z_obj)
    }
}

/// Pinhole projection of a world point.
pub fn project<T: Real>(
    camera: &CameraModel<T>,
    point: &WorldPoint<T>,
) -> Result<PixelCoord<T>, GeometryError> {
    let pc = camera.to_camera_frame(point);
    if pc.z <= T::lit(1e-9) {
        return Err(GeometryError::PointBehindCamera { depth: pc.z.as_f64() });
    }
    let k = &camera.intrinsics;
    Ok(PixelCoord::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    ))
}

/// Unit world-frame direction of the ray through `px`, starting at the camera center.
pub fn pixel_ray<T: Real>(camera: &CameraModel<T>, px: &PixelCoord<T>) -> Vector3<T> {
    let d = camera.intrinsics.unproject(px);
    camera.orientation.rotate(&d).normalize()
}

/// Intersects `origin + s * direction` with the horizontal plane `Z = z_obj`.
pub fn intersect_plane<T: Real>(
    origin: &WorldPoint<T>,
    direction: &Vector3<T>,
    z_obj: T,
) -> Result<(WorldPoint<T>, T), GeometryError> {
    if direction.z.abs() < T::lit(1e-12) {
        return Err(GeometryError::RayParallelToPlane);
    }
    let s = (z_obj - origin.z) / direction.z;
    if s <= T::zero() {
        return Err(GeometryError::IntersectionBehindCamera { s: s.as_f64() });
    }
    let mut p = origin + direction * s;
    p.z = z_obj;
    Ok((p, s))
}

/// Back-projects `px` onto the plane `Z = z_obj`.
pub fn inverse_project<T: Real>(
    camera: &CameraModel<T>,
    px: &PixelCoord<T>,
    z_obj: T,
) -> Result<WorldPoint<T>, GeometryError> {
    let d = pixel_ray(camera, px);
    intersect_plane(&camera.position, &d, z_obj).map(|(p, _)| p)
}
