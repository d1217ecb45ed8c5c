//! Scalar abstraction: all numerical code in this crate is generic over a
//! floating-point scalar so the same routines run in f32 (training speed)
//! and f64 (oracles, finite differences).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Convert an f64 literal into this scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable")
    }

    /// Widen to f64 for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// log(e^a + e^b) without overflow.
pub fn ln_add_exp<T: Real>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == T::neg_infinity() {
        return T::neg_infinity();
    }
    hi + (lo - hi).exp().ln_1p()
}

/// log(sum_i e^{x_i}) without overflow.
pub fn ln_sum_exp<T: Real>(xs: &[T]) -> T {
    let hi = xs.iter().cloned().fold(T::neg_infinity(), T::max);
    if hi == T::neg_infinity() {
        return T::neg_infinity();
    }
    let s: T = xs.iter().map(|&x| (x - hi).exp()).sum();
    hi + s.ln()
}
