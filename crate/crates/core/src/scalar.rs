//! Scalar abstraction used by every numeric kernel in this crate.
//!
//! All core math is generic over [`Scalar`] so the same code runs in `f32`
//! (training, checkpoints) and `f64` (LP solving, metrics, gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64`, used for constants and RNG draws.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Clamp into the unit interval.
    #[inline]
    fn clamp01(self) -> Self {
        self.max(Self::zero()).min(Self::one())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Divide guard used wherever a pixel intensity appears in a denominator:
/// half an 8-bit code step.
#[inline]
pub fn eps_guard<S: Scalar>() -> S {
    S::of(1.0 / 510.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn of_round_trips_small_integers() {
        assert_eq!(<f32 as Scalar>::of(3.0), 3.0f32);
        assert_eq!(<f64 as Scalar>::of(0.25), 0.25f64);
    }

    #[test]
    fn clamp01_bounds() {
        assert_eq!((-0.5f64).clamp01(), 0.0);
        assert_eq!(1.5f32.clamp01(), 1.0);
        assert_eq!(0.3f64.clamp01(), 0.3);
    }
}
