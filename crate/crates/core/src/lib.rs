//! lp-norm regression by primal-dual iteratively reweighted least squares.
//!
//! Two solvers share one weighted least-squares core:
//!
//! - [`low_precision::l2p_minimization`] finds `x` with `Ax = b` and
//!   `||x||_{2p}` within `1 + eps` of optimal, with iteration count polynomial
//!   in `1/eps`, or reports a dual certificate for a guessed value that is too
//!   small.
//! - [`refinement::lp_refine`] reaches relative accuracy `eps` in
//!   `O(log(1/eps))` rounds for `p >= 2`, each round solving a mixed
//!   `l_p + l_2` residual problem to a constant factor.
//!
//! General-form problems `min ||Nx - v||_p s.t. Ax = b` run on the same code
//! through [`reductions::StructuredLs`]; `1 < p < 2` goes through the dual
//! with [`reductions::solve_small_p`].
//!
//! Everything is generic over [`Scalar`] (`f64` and `f32`); the aliases below
//! fix the precision.

pub mod error;
pub mod instances;
pub mod low_precision;
pub mod ls;
pub mod matrix;
pub mod numerics;
mod qr;
pub mod reductions;
pub mod refinement;
pub mod residual;
pub mod scalar;

pub use error::{Result, SolverError};
pub use low_precision::{l2p_minimization, sub_solver, SolveOutcome, SubSolverConfig};
pub use ls::{energy, solve_augmented_ls, solve_weighted_ls, LeastSquaresOracle, WeightedLsSolver};
pub use matrix::{DenseMatrix, WeightVector};
pub use reductions::{lift_general, solve_general_structured, solve_small_p, GeneralInstance, StructuredLs};
pub use refinement::{lp_refine, RefineOptions, StepRule};
pub use residual::{residual_solve, ResidualProblem};
pub use scalar::Scalar;

pub type Matrix = DenseMatrix<f64>;
pub type Weights = WeightVector<f64>;
pub type Instance = GeneralInstance<f64>;

pub type Matrix32 = DenseMatrix<f32>;
pub type Weights32 = WeightVector<f32>;
pub type Instance32 = GeneralInstance<f32>;
