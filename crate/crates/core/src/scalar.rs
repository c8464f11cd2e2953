//! Scalar abstraction: all numerical kernels are generic over `Real` (f32 or f64).

use ndarray::{LinalgScalar, ScalarOperand};
use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + LinalgScalar
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Converts an f64 constant; panics only on non-representable input,
    /// which cannot happen for f32/f64.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must convert")
    }

    /// Widens to f64 (lossless for f32/f64).
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar must widen to f64")
    }
}

impl<T> Real for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + ScalarOperand
        + LinalgScalar
        + std::iter::Sum
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// `Real` that also has LAPACK kernels (eigendecompositions). Satisfied by
/// f32 and f64. Operations on the complex extension spell out their own
/// `Complex<F>` bounds.
pub trait LapackReal:
    Real + ndarray_linalg::Lapack + ndarray_linalg::Scalar<Real = Self, Complex = Complex<Self>>
{
}

impl<T> LapackReal for T where
    T: Real + ndarray_linalg::Lapack + ndarray_linalg::Scalar<Real = T, Complex = Complex<T>>
{
}
