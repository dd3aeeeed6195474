use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type the model, tape and metrics are generic over.
///
/// Training and gradient checks run in `f64`; `f32` is supported for
/// inference-only use of a trained checkpoint.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Short tag stored in checkpoints.
    const PRECISION: &'static str;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {
    const PRECISION: &'static str = "f32";
}

impl Scalar for f64 {
    const PRECISION: &'static str = "f64";
}
