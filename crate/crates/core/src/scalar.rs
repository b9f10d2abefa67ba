//! Floating point abstraction shared by every numerical routine in the crate.

use nalgebra as na;
use num_traits as nt;

/// Real scalar usable throughout the toolkit: `f32` or `f64`.
///
/// Everything is written against this trait; the crate root re-exports `f64`
/// aliases for the common case.
pub trait Real:
    na::RealField + Copy + nt::FromPrimitive + nt::ToPrimitive + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(value: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn machine_eps() -> Self;
}

macro_rules! impl_real {
    ($f:ty) => {
        impl Real for $f {
            #[inline]
            fn lit(value: f64) -> Self {
                value as $f
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn machine_eps() -> Self {
                <$f>::EPSILON
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Shorthand for [`Real::lit`].
#[inline]
pub fn lit<T: Real>(value: f64) -> T {
    T::lit(value)
}

/// Converts a slice of generic scalars to `f64` for serialization.
pub fn to_f64_vec<T: Real>(values: &[T]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64_lossy()).collect()
}

pub fn from_f64_slice<T: Real>(values: &[f64]) -> Vec<T> {
    values.iter().map(|&v| T::lit(v)).collect()
}
