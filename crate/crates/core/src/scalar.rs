//! Scalar abstraction: the geometry works over `f32` or `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar for all geometry in this crate.
///
/// Blanket-implemented for anything satisfying the bounds, in practice `f32`
/// and `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T: RealField + Copy + FromPrimitive + ToPrimitive> Scalar for T {}

/// Pulls an `f64` constant into the generic scalar type.
pub(crate) fn cast<S: Scalar>(value: f64) -> S {
    S::from_f64(value).expect("constant not representable in scalar type")
}

/// Widens a scalar to `f64`, e.g. for hashing or text output.
pub(crate) fn to_f64<S: Scalar>(value: S) -> f64 {
    value.to_f64().expect("scalar not representable as f64")
}
