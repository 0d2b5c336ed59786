//! Scalar abstraction: every numerical routine in this crate is generic over
//! `f32`/`f64` through [`Scalar`].

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the crate.
///
/// Bundles the numeric traits the algorithms need (`num_traits::Float` for
/// arithmetic, FFT support for the ramp filter) plus the exact error
/// function required by the GELU activation.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + rustfft::FftNum
    + Display
    + LowerExp
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Exact error function `erf(x)`.
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Shorthand conversion from `f64` constants into the working scalar type.
#[inline]
pub fn c<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 constant representable in scalar type")
}

/// Shorthand conversion from `usize` into the working scalar type.
#[inline]
pub fn cu<T: Scalar>(v: usize) -> T {
    T::from_usize(v).expect("usize representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        // erf(0) = 0, erf(1) = 0.8427007929497149, erf is odd.
        assert_eq!(Scalar::erf(0.0f64), 0.0);
        assert!((Scalar::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((Scalar::erf(0.5f64) + Scalar::erf(-0.5f64)).abs() < 1e-15);
        assert!((Scalar::erf(1.0f32) - 0.842_700_8f32).abs() < 1e-6);
    }

    #[test]
    fn conversions() {
        assert_eq!(c::<f64>(0.25), 0.25);
        assert_eq!(cu::<f32>(7), 7.0);
    }
}
