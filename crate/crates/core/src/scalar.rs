//! Scalar abstraction: the whole numeric core is generic over `Real`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable everywhere in the pipeline.
///
/// `f32` and `f64` both implement this. Gradient checks are only meaningful
/// at `f64`; the trainer default is `f64` as well (see `crate::Scalar`).
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }

    /// Conversion to `f64` for reporting and serialization.
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Conversion from `usize` counts (exact for the sizes used here).
    fn from_usizec(v: usize) -> Self {
        Self::from_usize(v).expect("count representable")
    }
}

impl<T> Real for T where
    T: num_traits::Float
        + num_traits::FromPrimitive
        + num_traits::ToPrimitive
        + num_traits::NumAssign
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
