//! Scalar abstraction shared by every numeric routine in the crate.

use ndarray::NdFloat;
use num_traits::{FloatConst, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the reconstruction pipeline is generic over: `f32` or `f64`.
pub trait Scalar: NdFloat + FloatConst + FromPrimitive + Serialize + DeserializeOwned + Default {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
