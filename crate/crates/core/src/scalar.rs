//! Scalar abstraction for the geometry and tracking code.
//!
//! Box arithmetic only needs ring operations and an ordering, so the same
//! code runs over `f32`, `f64` and exact rationals such as
//! `num_rational::Rational64`.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Numeric type usable for box coordinates, IoU scores and thresholds.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Larger of two values; `a` wins ties and incomparable pairs.
    #[inline]
    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    /// Smaller of two values; `a` wins ties and incomparable pairs.
    #[inline]
    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    /// Lossy conversion used for rendering and serialization.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// True only for values not equal to themselves (float NaN).
    #[inline]
    #[allow(clippy::eq_op)]
    fn is_nan_value(self) -> bool {
        self != self
    }

    /// Conversion from `f64`; panics only for values the type cannot hold.
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("value not representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}
