//! Floating-point element type shared by every numeric routine.
//!
//! Data lives in `T` (normally `f32`); reductions widen to `f64` through
//! [`Scalar::wide`] and narrow back with [`Scalar::narrow`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn wide(self) -> f64;

    fn narrow(v: f64) -> Self;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn wide(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn wide(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }
}

/// Minimum and maximum of a slice, accumulated in `f64`. `None` when empty.
pub fn min_max<T: Scalar>(values: &[T]) -> Option<(f64, f64)> {
    let mut it = values.iter().map(|v| v.wide());
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

/// `max_i |a_i - b_i|` in `f64`.
pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.wide() - y.wide()).abs())
        .fold(0.0, f64::max)
}
