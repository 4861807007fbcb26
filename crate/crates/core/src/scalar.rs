//! Scalar abstraction so the numeric core runs in either `f32` or `f64`.
//!
//! Everything downstream of feature extraction (networks, linear models,
//! metrics, standardizers) is generic over [`Scalar`]. The shipped pipeline
//! uses `f64`; the gradient-check tolerances in the test suite assume it.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar for the math core.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64`: exact for `f64`, rounded for `f32`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("every f64 converts into a Scalar")
    }

    /// Widening conversion to `f64` (exact for both impls).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
