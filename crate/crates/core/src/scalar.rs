use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical core is generic over: `f32` or `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossy conversion of an `f64` literal into the working scalar.
#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Tolerance `x`, raised to 32 ulps of `T` so roundoff in `f32` does not
/// trip thresholds tuned for `f64`.
#[inline]
pub fn tol<T: Scalar>(x: f64) -> T {
    c(tol_f64::<T>(x))
}

#[inline]
pub fn tol_f64<T: Scalar>(x: f64) -> f64 {
    x.max(32.0 * to_f64(T::default_epsilon()))
}
