//! Scalar abstraction for the numeric core.

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable by geometry, filtering and mapping code (`f32` or `f64`).
pub trait Real: RealField + Copy + FloatConst + FromPrimitive + ToPrimitive {
    /// Lossy conversion from an `f64` literal or configuration value.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut w = angle - two_pi * ((angle + T::PI()) / two_pi).floor();
    if w <= -T::PI() {
        w += two_pi;
    }
    if w > T::PI() {
        w -= two_pi;
    }
    w
}
