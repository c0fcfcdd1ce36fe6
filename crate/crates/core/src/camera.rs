//! Pinhole camera intrinsics, pixel/normalized coordinate conversion, and
//! point projection. Zero skew; `fx != fy` is allowed.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::lie::Pose;
use crate::scalar::{cast, Scalar};

/// Cheirality cutoff: camera-frame depths at or below this are "behind".
const Z_MIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: fx = {fx}, fy = {fy}, width = {width}, height = {height}")]
    InvalidIntrinsics {
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    },
}

/// Pinhole intrinsics: focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<S: Scalar> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub width: u32,
    pub height: u32,
}

impl<S: Scalar> Intrinsics<S> {
    pub fn new(fx: S, fy: S, cx: S, cy: S, width: u32, height: u32) -> Result<Self, CameraError> {
        if fx <= S::zero() || fy <= S::zero() || width == 0 || height == 0 {
            return Err(CameraError::InvalidIntrinsics {
                fx: crate::scalar::to_f64(fx),
                fy: crate::scalar::to_f64(fy),
                width,
                height,
            });
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// The calibration matrix K.
    pub fn matrix(&self) -> Matrix3<S> {
        Matrix3::new(
            self.fx,
            S::zero(),
            self.cx,
            S::zero(),
            self.fy,
            self.cy,
            S::zero(),
            S::zero(),
            S::one(),
        )
    }

    /// K^-1, in closed form for the zero-skew model.
    pub fn inverse_matrix(&self) -> Matrix3<S> {
        Matrix3::new(
            S::one() / self.fx,
            S::zero(),
            -self.cx / self.fx,
            S::zero(),
            S::one() / self.fy,
            -self.cy / self.fy,
            S::zero(),
            S::zero(),
            S::one(),
        )
    }

    /// Pixel to normalized camera coordinates: `((u-cx)/fx, (v-cy)/fy, 1)`.
    pub fn normalize(&self, p: &PixelPoint<S>) -> Vector3<S> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, S::one())
    }

    /// Normalized camera coordinates back to pixels (divides by z).
    pub fn denormalize(&self, x: &Vector3<S>) -> PixelPoint<S> {
        PixelPoint {
            u: self.fx * x[0] / x[2] + self.cx,
            v: self.fy * x[1] / x[2] + self.cy,
        }
    }

    /// Whether a pixel lands inside the image rectangle.
    pub fn contains(&self, p: &PixelPoint<S>) -> bool {
        p.u >= S::zero()
            && p.v >= S::zero()
            && p.u < S::from_u32(self.width).unwrap()
            && p.v < S::from_u32(self.height).unwrap()
    }
}

/// Pixel coordinates; treated as homogeneous `(u, v, 1)` where needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint<S: Scalar> {
    pub u: S,
    pub v: S,
}

impl<S: Scalar> PixelPoint<S> {
    pub fn new(u: S, v: S) -> Self {
        PixelPoint { u, v }
    }

    /// Homogeneous form `(u, v, 1)`.
    pub fn homogeneous(&self) -> Vector3<S> {
        Vector3::new(self.u, self.v, S::one())
    }
}

/// Projects a world point through a world-to-camera pose; `None` when the
/// point is behind the camera (depth <= 1e-6 m). Out-of-bounds pixels are
/// still returned; callers filter with [`Intrinsics::contains`].
pub fn project<S: Scalar>(
    k: &Intrinsics<S>,
    pose: &Pose<S>,
    x_world: &Vector3<S>,
) -> Option<PixelPoint<S>> {
    let x_cam = pose.transform_point(x_world);
    if x_cam[2] <= cast::<S>(Z_MIN) {
        return None;
    }
    Some(PixelPoint {
        u: k.fx * x_cam[0] / x_cam[2] + k.cx,
        v: k.fy * x_cam[1] / x_cam[2] + k.cy,
    })
}
