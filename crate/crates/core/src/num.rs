//! Scalar abstraction for the emission arithmetic.
//!
//! Emission factors, distances and speeds are real-valued; token amounts are
//! not (see [`crate::amount`]). Everything on the real-valued side is generic
//! over [`Scalar`] so the same pipeline runs in `f32` or `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal; exact for every value the crate uses as a constant.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }
}

/// Rounds to the nearest integer, ties to even.
pub fn round_half_even<T: Scalar>(x: T) -> T {
    let r = x.round();
    let diff = (x - x.trunc()).abs();
    if diff == T::lit(0.5) {
        let half = r / T::lit(2.0);
        if half.trunc() != half {
            return r - x.signum();
        }
    }
    r
}
