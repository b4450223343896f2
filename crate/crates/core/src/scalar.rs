//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type the model and optimizer are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts `T` into `f64` (used at sampling and I/O boundaries).
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Tolerance for "is this row stochastic": 1e-12, widened to the precision of `T`.
pub fn stochastic_tol<T: Scalar>() -> T {
    lit::<T>(1e-12).max(T::epsilon() * lit(64.0))
}

/// Largest deviation from 1 that input rows may have and still be renormalized.
pub fn renorm_tol<T: Scalar>() -> T {
    lit::<T>(1e-9).max(T::epsilon() * lit(1024.0))
}

/// Smallest probability treated as nonzero (1e-300, or the smallest normal of `T`).
pub fn prob_floor<T: Scalar>() -> T {
    lit::<T>(1e-300).max(T::min_positive_value())
}
