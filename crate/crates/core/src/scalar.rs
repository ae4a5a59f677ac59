//! Scalar abstraction for the closed-form budget math.

use num_traits::{Float, FromPrimitive, NumCast};
use std::fmt::{Debug, Display};

/// Floating point scalar usable by the variance, cost and update formulas.
pub trait Real: Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` literal, panicking only if the type cannot represent it at all.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
