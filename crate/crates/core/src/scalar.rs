//! Floating-point scalar abstraction shared by the jet engine, networks and trainer.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumCast};

/// Real scalar usable by every numeric routine in the crate: `f32` or `f64`.
///
/// Matrix products go through `ndarray`, which dispatches both types to
/// packed GEMM kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, rounding when `Self` is narrower.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 is representable in every Scalar type")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
