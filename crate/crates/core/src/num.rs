//! Scalar abstraction for the math kernels.
//!
//! All geometry and rendering code is generic over a floating-point scalar so
//! the same kernels run in f32 or f64. The pipeline modules (optimizer, data
//! I/O, CLI) use the `Real` alias from the crate root.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the core math is generic over.
pub trait Scalar: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    fn is_finite_scalar(self) -> bool;
}

impl Scalar for f32 {
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

/// Convert an f64 constant into the working scalar type.
#[inline]
pub fn real<T: Scalar>(v: f64) -> T {
    nalgebra::convert(v)
}
