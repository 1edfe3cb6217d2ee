use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar for the differentiable training path.
///
/// Training runs in `f32`; gradient checking runs the same code in `f64`.
pub trait Real: Float + Sum + Debug + Send + Sync + 'static {
    fn erf(self) -> Self;

    fn from_f64(v: f64) -> Self;

    fn from_f32(v: f32) -> Self;

    fn to_f32(self) -> f32;

    #[inline]
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }

    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }

    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}
