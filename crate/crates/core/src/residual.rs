//! Constant-factor solver for the mixed objective
//! `min ||x^2||_p + <theta, x^2>` over `{Ax = 0, <g, x> = c}`.
//!
//! Small exponents are handled with a single least-squares solve; larger ones
//! run the primal-dual loop of the low-precision sub-solver with threshold 2
//! and a dual vector started strictly inside the unit `q`-ball.

use log::warn;

use crate::error::{Result, SolverError};
use crate::low_precision::{DualStep, ExitCase, SolveOutcome};
use crate::ls::{FeasiblePoint, LeastSquaresOracle, WeightedLsSolver};
use crate::matrix::{DenseMatrix, WeightVector};
use crate::numerics::{dual_exponent, gamma_log_step, lp_norm, lp_norm_pow, pow_guarded};
use crate::scalar::Scalar;

/// Which of the two regimes handles a residual problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualBranch {
    /// `q >= ln n`: one least-squares solve.
    SmallP,
    /// Primal-dual loop.
    LargeP,
}

/// Branch for exponent `p` over `n` weighted coordinates.
///
/// For `n >= 3` this is `p <= ln n / (ln n - 1)`. For `n <= 2` that
/// expression is not positive while `q >= ln n` holds for every `p`, so the
/// single-solve branch is used.
pub fn residual_branch<T: Scalar>(p: T, n: usize) -> ResidualBranch {
    let ln_n = T::from_usize_lossy(n).ln();
    if ln_n <= T::one() || p <= ln_n / (ln_n - T::one()) {
        ResidualBranch::SmallP
    } else {
        ResidualBranch::LargeP
    }
}

/// A residual problem over `[A; g^T] x = [0; rhs]`.
#[derive(Debug, Clone)]
pub struct ResidualProblem<T> {
    /// Norm parameter of the objective `||x^2||_p`.
    pub p: T,
    pub a: DenseMatrix<T>,
    /// Distinguished last constraint row.
    pub g: Vec<T>,
    /// Right-hand side of the `g` row; all other rows are homogeneous.
    pub rhs: T,
    pub theta: WeightVector<T>,
    /// Target value.
    pub m: T,
}

/// Outcome of a residual solve together with its guarantee constant.
#[derive(Debug, Clone)]
pub struct ResidualRun<T> {
    pub outcome: SolveOutcome<T>,
    pub branch: ResidualBranch,
    /// 1 on the single-solve branch, `q` otherwise: certificates prove `OPT >= M^2 / (2 kappa)`.
    pub kappa: T,
    pub exit: ExitCase,
    /// Backend parameters matching a primal outcome (see [`crate::ls::FeasiblePoint`]).
    pub params: Vec<T>,
    pub iterations: usize,
    pub linear_solves: usize,
    pub steps: Vec<DualStep<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub max_iterations: usize,
    pub record_steps: bool,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { max_iterations: 100_000, record_steps: false }
    }
}

fn add<T: Scalar>(r: &[T], theta: &[T]) -> Vec<T> {
    r.iter().zip(theta).map(|(&a, &b)| a + b).collect()
}

/// Residual solver against any least-squares backend; the feasible set is the
/// direction space of the backend intersected with `<g, x> = rhs`.
pub fn residual_solve_with<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    p: T,
    g: &[T],
    rhs: T,
    theta: &[T],
    m: T,
    opts: ResidualOptions,
) -> Result<ResidualRun<T>> {
    if !(p >= T::one()) || !p.is_finite() {
        return Err(SolverError::InvalidInput(format!("residual exponent must be >= 1, got {p}")));
    }
    if !(m > T::zero()) || !m.is_finite() {
        return Err(SolverError::InvalidInput(format!("residual target must be positive, got {m}")));
    }
    let n = oracle.dim();
    if g.len() != n || theta.len() != n {
        return Err(SolverError::DimensionMismatch(format!("g and theta must have length {n}")));
    }
    let q = dual_exponent(p);
    let two_p = T::c(2.0) * p;
    let two_m = T::c(2.0) * m;
    let nf = T::from_usize_lossy(n);
    let solves_before = oracle.linear_solves();
    let branch = residual_branch(p, n);

    if branch == ResidualBranch::SmallP {
        let r = vec![pow_guarded(nf, -T::one() / q); n];
        let x = oracle.solve_direction(&add(&r, theta), g, rhs)?;
        let (outcome, params) = if lp_norm(&x.y, two_p) <= two_m {
            (SolveOutcome::Primal(x.y), x.params)
        } else {
            (SolveOutcome::Certificate(r), Vec::new())
        };
        return Ok(ResidualRun {
            outcome,
            branch,
            kappa: T::one(),
            exit: ExitCase::SingleSolve,
            params,
            iterations: 1,
            linear_solves: oracle.linear_solves() - solves_before,
            steps: Vec::new(),
        });
    }

    let two = T::c(2.0);
    let two_q = two * q;
    let r0 = (two_q - T::one()) / (two_q * pow_guarded(nf, T::one() / q));
    let ln_cap = two / (two_q + T::one()) * nf.ln();
    let soft_bound = 100.0 * (n as f64).powf(1.0 / (2.0 * q.to_f64_lossy() + 1.0));
    let mut r = vec![r0; n];
    let mut sum: Vec<T> = vec![T::zero(); n];
    let mut sum_params: Vec<T> = Vec::new();
    let mut t_low = 0usize;
    let mut t = 0usize;
    let mut steps = Vec::new();

    let run = |outcome, params, exit, t: usize, steps, oracle: &O| {
        if t as f64 > soft_bound {
            warn!("residual solver used {t} iterations, above 100 n^(1/(2q+1)) = {soft_bound:.1}");
        }
        Ok(ResidualRun {
            outcome,
            branch,
            kappa: q,
            exit,
            params,
            iterations: t,
            linear_solves: oracle.linear_solves() - solves_before,
            steps,
        })
    };

    while lp_norm_pow(&r, q) <= T::one() {
        if t >= opts.max_iterations {
            return Err(SolverError::IterationBudgetExceeded(opts.max_iterations));
        }
        let FeasiblePoint { y: x, params } = oracle.solve_direction(&add(&r, theta), g, rhs)?;
        let step = gamma_log_step(&x, &r, m, q, two);
        if !step.any_triggered() {
            if opts.record_steps {
                steps.push(DualStep { r_prev: r.clone(), r_next: r.clone(), x: x.clone(), triggered: false });
            }
            return run(SolveOutcome::Primal(x), params, ExitCase::NoTrigger, t, steps, oracle);
        }
        let alpha = step.alpha(q);
        let r_next: Vec<T> = r.iter().zip(&alpha).map(|(&ri, &a)| ri * a).collect();
        if opts.record_steps {
            steps.push(DualStep { r_prev: r.clone(), r_next: r_next.clone(), x: x.clone(), triggered: true });
        }
        r = r_next;
        t += 1;
        if step.max_ln_alpha(q) <= ln_cap {
            sum.iter_mut().zip(&x).for_each(|(s, &v)| *s += v);
            if sum_params.len() < params.len() {
                sum_params.resize(params.len(), T::zero());
            }
            sum_params.iter_mut().zip(&params).for_each(|(s, &v)| *s += v);
            t_low += 1;
            let inv = T::one() / T::from_usize_lossy(t_low);
            let avg: Vec<T> = sum.iter().map(|&s| s * inv).collect();
            if lp_norm(&avg, two_p) <= two_m {
                let avg_params = sum_params.iter().map(|&s| s * inv).collect();
                return run(SolveOutcome::Primal(avg), avg_params, ExitCase::LowStepAverage, t, steps, oracle);
            }
        }
    }
    let norm = lp_norm(&r, q);
    let cert = r.iter().map(|&v| v / norm).collect();
    run(SolveOutcome::Certificate(cert), Vec::new(), ExitCase::DualBudget, t, steps, oracle)
}

/// Solves a [`ResidualProblem`] given in explicit matrix form.
pub fn residual_solve<T: Scalar>(prob: &ResidualProblem<T>) -> Result<ResidualRun<T>> {
    let mut oracle = WeightedLsSolver::new(prob.a.clone(), vec![T::zero(); prob.a.rows()])?;
    residual_solve_with(&mut oracle, prob.p, &prob.g, prob.rhs, prob.theta.as_slice(), prob.m, ResidualOptions::default())
}

/// Both sides of `E(r_next + theta) - E(r_prev + theta) >= M^2 (||r_next||_q - ||r_prev||_q)`,
/// with energies over the direction set `{Ax = 0, <g, x> = rhs}`.
#[allow(clippy::too_many_arguments)]
pub fn residual_invariant_witness<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    g: &[T],
    rhs: T,
    step: &DualStep<T>,
    theta: &[T],
    m: T,
    q: T,
) -> Result<(T, T)> {
    if step.r_prev == step.r_next {
        return Ok((T::zero(), T::zero()));
    }
    let lhs = direction_energy(oracle, g, rhs, &add(&step.r_next, theta))?
        - direction_energy(oracle, g, rhs, &add(&step.r_prev, theta))?;
    let rhs_val = m * m * (lp_norm(&step.r_next, q) - lp_norm(&step.r_prev, q));
    Ok((lhs, rhs_val))
}

/// `min <w, x^2>` over `{Ax = 0, <g, x> = rhs}`.
pub fn direction_energy<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    g: &[T],
    rhs: T,
    w: &[T],
) -> Result<T> {
    let x = oracle.solve_direction(w, g, rhs)?.y;
    Ok(w.iter().zip(&x).map(|(&wi, &xi)| wi * xi * xi).sum())
}
