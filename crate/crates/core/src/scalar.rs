//! Scalar abstraction for the numeric kernels.
//!
//! Everything numerical in this crate is generic over [`Real`], which is
//! implemented for `f32` and `f64`. Concrete `f64` aliases for the domain
//! types live at the crate root; `f32` is mainly useful for memory-bound
//! batch work and for checking that algorithms are not accidentally
//! precision-dependent.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Lossy widening to `f64` (exact for `f32` and `f64`).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn hypot_generic<R: Real>(a: R, b: R) -> R {
        (a * a + b * b).sqrt()
    }

    #[test]
    fn both_widths_work() {
        assert!((hypot_generic(3.0f32, 4.0f32) - 5.0).abs() < 1e-6);
        assert!((hypot_generic(3.0f64, 4.0f64) - 5.0).abs() < 1e-12);
        assert_eq!(f64::of(0.25), 0.25);
        assert_eq!(0.25f64.as_f64(), 0.25);
    }
}
