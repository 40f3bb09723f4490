//! Floating-point abstraction shared by every solver in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar the solvers are generic over.
///
/// Besides the arithmetic bounds, each implementation pins the numerical
/// tolerances used by the linear-system layer. They are relative quantities
/// and scale with the working precision.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Weights below `WEIGHT_FLOOR * max(w)` count as zero (least squares) or
    /// are raised to that floor (normal equations).
    const WEIGHT_FLOOR: Self;
    /// Relative pivot size below which a factorization treats a direction as dependent.
    const PIVOT_THRESHOLD: Self;
    /// A solve is feasible when `||Ax - b|| <= FEASIBILITY_TOL * (1 + ||b||)`.
    const FEASIBILITY_TOL: Self;

    /// Lossy conversion from `f64`, used for literal constants.
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant representable")
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const WEIGHT_FLOOR: Self = 1e-12;
    const PIVOT_THRESHOLD: Self = 1e-12;
    const FEASIBILITY_TOL: Self = 1e-8;
}

impl Scalar for f32 {
    const WEIGHT_FLOOR: Self = 1e-6;
    const PIVOT_THRESHOLD: Self = 1e-6;
    const FEASIBILITY_TOL: Self = 1e-3;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_round_trip() {
        assert_eq!(f64::c(0.25), 0.25);
        assert_eq!(f32::c(0.5), 0.5f32);
        assert_eq!(f64::from_usize_lossy(7), 7.0);
        assert_eq!(3.5f32.to_f64_lossy(), 3.5);
    }
}
