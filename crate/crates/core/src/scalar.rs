//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`], a thin bundle of
//! `num_traits` bounds implemented by `f32` and `f64`. The pipeline layers
//! (dataset IO, training, CLI) instantiate everything at `f64`; the generic
//! parameter exists so the math modules stay scalar-agnostic and testable at
//! both widths.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating point scalar usable throughout the numeric core.
pub trait Real:
    Float + FromPrimitive + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion to `f64`, used by loggers and report writers.
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Converts an `f64` constant into `T`.
///
/// Panics if the value is not representable, which cannot happen for finite
/// constants and the two provided impls.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_convert_at_both_widths() {
        let a: f32 = real(0.25);
        let b: f64 = real(0.25);
        assert_eq!(a, 0.25f32);
        assert_eq!(b, 0.25f64);
    }
}
