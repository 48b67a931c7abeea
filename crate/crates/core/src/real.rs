use core::fmt;
use core::iter::Sum;

use num_traits::Float;

/// Precision tag carried by tensors: single for training, double for
/// oracle-grade tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    Single,
    Double,
}

/// Scalar type the engine is generic over. `f32` everywhere in training,
/// `f64` wherever a test needs oracle precision.
pub trait Real:
    Float + num_traits::NumAssignOps + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::Single;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::Double;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
