//! Scalar abstraction for the numeric core.
//!
//! Everything differentiable is generic over [`Scalar`] so the same code runs
//! in f32 (pipeline default, matches the on-disk tensor dtype) and f64
//! (gradient checks and tolerance-sensitive tests).

use ndarray::NdFloat;
use num_traits::{FloatConst, FromPrimitive};

/// Floating scalar usable in the model core: ndarray arithmetic + matmul,
/// conversions from literals and counts, and math constants.
pub trait Scalar: NdFloat + FromPrimitive + FloatConst + Default {
    /// Lossy conversion from f64 (used for literals and RNG draws).
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float scalar")
    }

    /// Widening conversion for logging and metric aggregation.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Shorthand for `T::from_f64_lossy` that reads well at call sites.
pub fn s<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}
