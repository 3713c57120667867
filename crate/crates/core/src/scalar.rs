//! Scalar abstractions: floating-point reals for estimation and a weaker
//! field bound for the weight kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating-point scalar used throughout the estimation stack.
///
/// Implemented by `f32` and `f64`. The `FromPrimitive`/`ToPrimitive`
/// bounds let distribution kernels run in `f64` internally regardless of
/// the working precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossless-ish conversion from `f64` (panics only for exotic types).
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 must convert into Real scalar")
    }

    /// Conversion to `f64` for distribution kernels and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real scalar must convert into f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

/// Field scalar sufficient for inverse-probability weight arithmetic.
///
/// The weight products use only ring/field operations and comparisons, so
/// they can be evaluated exactly with `num_rational::Ratio` as well as with
/// floats. This is what makes the brute-force identification checks exact.
pub trait WeightScalar: Num + Clone + PartialOrd + Debug {}

impl<T> WeightScalar for T where T: Num + Clone + PartialOrd + Debug {}
