//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All engines are written against [`Real`], which `f32` and `f64` implement.
//! Tolerances quoted throughout the tests assume `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type usable by the engines.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::LowerExp + Send + Sync
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Converts `T` to `f64` (lossless for `f32` and `f64`).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

#[inline]
pub(crate) fn all_finite<'a, T: Real + 'a>(mut it: impl Iterator<Item = &'a T>) -> bool {
    it.all(|v| v.is_finite())
}
