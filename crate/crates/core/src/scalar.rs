use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point type the grid operators and the PDE solver are generic over.
///
/// Monte-Carlo bookkeeping (clocks, rates, samplers) always runs in `f64`; only
/// the deterministic numerics are parameterized.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + rustfft::FftNum + Default + Debug + Display + Send + Sync + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Machine epsilon as f64, used to scale roundoff tolerances.
    fn eps() -> f64 {
        Self::epsilon().as_f64()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
