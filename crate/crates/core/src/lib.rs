//! Camera pose refinement from multi-view epipolar constraints.
//!
//! Given a query view, an initial pose estimate, and a source of rendered
//! views at hypothesized poses, the pipeline iteratively refines the pose:
//! per iteration it matches the query against a reference view (rendered at
//! the current estimate) and a set of perturbed candidate views, estimates
//! scale-ambiguous relative poses from the 2D-2D matches, resolves scale and
//! rotation by a multi-view consistency solve, and polishes the result with a
//! robust Levenberg-Marquardt minimization of point-to-epipolar-line
//! distances over an se(3) increment.
//!
//! Conventions, fixed library-wide:
//! - Poses are world-to-camera: `x_cam = R * x_world + t`.
//! - Rotations are reported in degrees at the metrics boundary, radians
//!   everywhere else; translations are in meters.
//! - All randomness flows from explicit seeds.
//!
//! The core is generic over the scalar type via [`Scalar`] (`f32` or `f64`);
//! concrete `f64` and `f32` aliases for the value types live at the crate
//! root.

pub mod camera;
pub mod config;
pub mod consistency;
pub mod egc;
pub mod epipolar;
pub mod io;
pub mod lie;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

/// `f64` rotation matrix.
pub type RotationF64 = lie::Rotation<f64>;
/// `f32` rotation matrix.
pub type RotationF32 = lie::Rotation<f32>;
/// `f64` world-to-camera pose.
pub type PoseF64 = lie::Pose<f64>;
/// `f32` world-to-camera pose.
pub type PoseF32 = lie::Pose<f32>;
/// `f64` se(3) twist.
pub type TwistF64 = lie::Twist<f64>;
/// `f32` se(3) twist.
pub type TwistF32 = lie::Twist<f32>;
/// `f64` pinhole intrinsics.
pub type IntrinsicsF64 = camera::Intrinsics<f64>;
/// `f32` pinhole intrinsics.
pub type IntrinsicsF32 = camera::Intrinsics<f32>;
/// `f64` pixel coordinate.
pub type PixelPointF64 = camera::PixelPoint<f64>;
/// `f32` pixel coordinate.
pub type PixelPointF32 = camera::PixelPoint<f32>;

pub(crate) mod seed {
    /// Mixes a base seed with stream identifiers so that distinct pipeline
    /// stages, iterations, and views draw from independent streams while
    /// staying reproducible. SplitMix64 finalizer.
    pub fn mix(base: u64, a: u64, b: u64) -> u64 {
        let mut z = base
            .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}
