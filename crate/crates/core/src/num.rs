//! Scalar abstraction: all coordinate math is generic over `Real`.
//!
//! `f32` and `f64` are the two supported scalars. Random draws are always
//! made in `f64` and converted, so f32 and f64 runs consume identical
//! random streams.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant to the active scalar type.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 is convertible to any Real scalar")
}

/// Converts a `usize` count to the active scalar type.
#[inline]
pub fn real_of_usize<T: Real>(v: usize) -> T {
    T::from_usize(v).expect("usize is convertible to any Real scalar")
}
