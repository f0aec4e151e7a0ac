use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point element type accepted by every numerical routine in the crate.
///
/// Implemented for `f32` and `f64`. Benchmarks and tolerances in the tests
/// are stated for `f64`; `f32` is usable wherever its precision suffices.
pub trait Scalar:
    RealField + Copy + Default + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }

    #[inline]
    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// Smallest positive `x` such that `1 + x != 1`.
    fn machine_epsilon() -> Self;
}

impl Scalar for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}
