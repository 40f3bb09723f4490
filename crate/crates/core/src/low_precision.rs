//! The poly(1/eps) solver for `min_{Ax=b} ||x||_{2p}`: a binary search over
//! the guess `M` driving a primal-dual sub-solver.
//!
//! The sub-solver keeps a positive dual vector `r` and grows it
//! multiplicatively while the energy `E(r) = min_{Ax=b} <r, x^2>` keeps pace
//! with `M^2 ||r||_q`. It stops with a primal point once no coordinate can be
//! raised (or once the average of the low-step iterates is good enough), and
//! with a dual certificate once `||r||_q` exceeds `1/eps`.

use log::warn;

use crate::error::{Result, SolverError};
use crate::ls::{FeasiblePoint, LeastSquaresOracle, WeightedLsSolver};
use crate::matrix::DenseMatrix;
use crate::numerics::{dual_exponent, gamma_log_step, lp_norm, pow_guarded};
use crate::scalar::Scalar;

/// Result of one primal-dual solve.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome<T> {
    /// A feasible point meeting the target.
    Primal(Vec<T>),
    /// A dual witness `r >= 0` normalized to `||r||_q = 1`.
    Certificate(Vec<T>),
}

impl<T> SolveOutcome<T> {
    pub fn is_primal(&self) -> bool {
        matches!(self, SolveOutcome::Primal(_))
    }

    pub fn primal(&self) -> Option<&[T]> {
        match self {
            SolveOutcome::Primal(x) => Some(x),
            SolveOutcome::Certificate(_) => None,
        }
    }

    pub fn certificate(&self) -> Option<&[T]> {
        match self {
            SolveOutcome::Certificate(r) => Some(r),
            SolveOutcome::Primal(_) => None,
        }
    }
}

/// Which exit of the primal-dual loop produced the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCase {
    /// No coordinate triggered: the current iterate meets the target.
    NoTrigger,
    /// The running average of low-step iterates meets the target.
    LowStepAverage,
    /// The dual norm exceeded its budget.
    DualBudget,
    /// Single least-squares solve of the small-exponent residual branch.
    SingleSolve,
}

/// Dual state of the sub-solver.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate<T> {
    pub r: Vec<T>,
    pub t: usize,
    /// Sum of the primal iterates of low steps.
    pub s: FeasiblePoint<T>,
    pub t_low: usize,
}

/// One recorded dual update.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStep<T> {
    pub r_prev: Vec<T>,
    pub r_next: Vec<T>,
    /// Primal minimizer at `r_prev`.
    pub x: Vec<T>,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubSolverConfig<T> {
    /// Objective is `||x||_{2p}`; the dual exponent is `q = p / (p - 1)`.
    pub p: T,
    pub epsilon: T,
    /// Guess for the optimum value.
    pub m: T,
    /// Low-step cap `S`; `None` selects `n^(2/(2q+1)) (1/eps)^((q-1)/(2q+1))`.
    pub step_cap: Option<T>,
    /// `None` selects ten times the iteration bound, but at least 10 000.
    pub max_iterations: Option<usize>,
    pub record_steps: bool,
}

impl<T: Scalar> SubSolverConfig<T> {
    pub fn new(p: T, epsilon: T, m: T) -> Self {
        Self { p, epsilon, m, step_cap: None, max_iterations: None, record_steps: false }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p > T::one()) || !self.p.is_finite() {
            return Err(SolverError::InvalidInput(format!("sub-solver needs p > 1, got {}", self.p)));
        }
        validate_epsilon(self.epsilon)?;
        if !(self.m > T::zero()) || !self.m.is_finite() {
            return Err(SolverError::InvalidInput(format!("guess M must be positive, got {}", self.m)));
        }
        Ok(())
    }
}

pub(crate) fn validate_epsilon<T: Scalar>(eps: T) -> Result<()> {
    if !(eps > T::zero() && eps < T::one()) {
        return Err(SolverError::InvalidInput(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// `S = n^(2/(2q+1)) (1/eps)^((q-1)/(2q+1))`.
pub fn default_step_cap<T: Scalar>(n: usize, q: T, eps: T) -> T {
    let two_q1 = T::c(2.0) * q + T::one();
    pow_guarded(T::from_usize_lossy(n), T::c(2.0) / two_q1) * pow_guarded(T::one() / eps, (q - T::one()) / two_q1)
}

/// Iteration bound of the sub-solver with unit constant:
/// `((1/eps)^((q+3)/2) + n^(1/(2q+1)) (1/eps)^((q^2+2q)/(2q+1))) ln(n / eps^q)`.
pub fn iteration_bound(n: usize, q: f64, eps: f64) -> f64 {
    let inv = 1.0 / eps;
    let nf = n as f64;
    let lead = inv.powf((q + 3.0) / 2.0) + nf.powf(1.0 / (2.0 * q + 1.0)) * inv.powf((q * q + 2.0 * q) / (2.0 * q + 1.0));
    lead * (nf.ln() - q * eps.ln()).max(1.0)
}

fn default_max_iterations(n: usize, q: f64, eps: f64) -> usize {
    let b = 10.0 * iteration_bound(n, q, eps);
    if b.is_finite() && b < 1e9 {
        (b as usize).max(10_000)
    } else {
        1_000_000_000
    }
}

/// Record of a complete sub-solver run.
#[derive(Debug, Clone)]
pub struct SubSolverRun<T> {
    pub outcome: SolveOutcome<T>,
    pub exit: ExitCase,
    /// Decision variables of the primal outcome (empty for the affine form).
    pub params: Vec<T>,
    pub iterations: usize,
    pub linear_solves: usize,
    pub final_iterate: DualIterate<T>,
    pub steps: Vec<DualStep<T>>,
}

fn scaled<T: Scalar>(p: &FeasiblePoint<T>, c: T) -> FeasiblePoint<T> {
    FeasiblePoint { y: p.y.iter().map(|&v| v * c).collect(), params: p.params.iter().map(|&v| v * c).collect() }
}

fn accumulate<T: Scalar>(acc: &mut FeasiblePoint<T>, x: &FeasiblePoint<T>) {
    if acc.y.is_empty() {
        *acc = x.clone();
        return;
    }
    acc.y.iter_mut().zip(&x.y).for_each(|(a, &v)| *a += v);
    acc.params.iter_mut().zip(&x.params).for_each(|(a, &v)| *a += v);
}

/// Primal-dual sub-solver against any least-squares backend.
pub fn sub_solver_with<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    cfg: &SubSolverConfig<T>,
) -> Result<SubSolverRun<T>> {
    cfg.validate()?;
    let n = oracle.dim();
    let q = dual_exponent(cfg.p);
    let eps = cfg.epsilon;
    let m = cfg.m;
    let two_p = T::c(2.0) * cfg.p;
    let threshold = T::one() + eps;
    let target = (T::one() + eps) * m;
    let cap = cfg.step_cap.unwrap_or_else(|| default_step_cap(n, q, eps));
    let ln_cap = cap.ln();
    let budget = T::one() / eps;
    let max_iter = cfg
        .max_iterations
        .unwrap_or_else(|| default_max_iterations(n, q.to_f64_lossy(), eps.to_f64_lossy()));
    let soft_bound = 100.0 * iteration_bound(n, q.to_f64_lossy(), eps.to_f64_lossy());
    let solves_before = oracle.linear_solves();

    let r0 = pow_guarded(T::from_usize_lossy(n), -T::one() / q);
    let mut it = DualIterate {
        r: vec![r0; n],
        t: 0,
        s: FeasiblePoint { y: Vec::new(), params: Vec::new() },
        t_low: 0,
    };
    let mut steps = Vec::new();

    let finish = |it: DualIterate<T>, outcome, exit, params, steps, oracle: &O| {
        if it.t as f64 > soft_bound {
            warn!("sub-solver used {} iterations, above 100x the analytic bound {soft_bound:.3e}", it.t);
        }
        Ok(SubSolverRun {
            outcome,
            exit,
            params,
            iterations: it.t,
            linear_solves: oracle.linear_solves() - solves_before,
            final_iterate: it,
            steps,
        })
    };

    while lp_norm(&it.r, q) <= budget {
        if it.t >= max_iter {
            return Err(SolverError::IterationBudgetExceeded(max_iter));
        }
        let x = oracle.solve_point(&it.r)?;
        let step = gamma_log_step(&x.y, &it.r, m, q, threshold);
        if !step.any_triggered() {
            if cfg.record_steps {
                steps.push(DualStep { r_prev: it.r.clone(), r_next: it.r.clone(), x: x.y.clone(), triggered: false });
            }
            return finish(it, SolveOutcome::Primal(x.y), ExitCase::NoTrigger, x.params, steps, oracle);
        }
        let alpha = step.alpha(q);
        let r_next: Vec<T> = it.r.iter().zip(&alpha).map(|(&r, &a)| r * a).collect();
        if cfg.record_steps {
            steps.push(DualStep { r_prev: it.r.clone(), r_next: r_next.clone(), x: x.y.clone(), triggered: true });
        }
        it.r = r_next;
        if step.max_ln_alpha(q) <= ln_cap {
            accumulate(&mut it.s, &x);
            it.t_low += 1;
            let avg = scaled(&it.s, T::one() / T::from_usize_lossy(it.t_low));
            if lp_norm(&avg.y, two_p) <= target {
                it.t += 1;
                return finish(it, SolveOutcome::Primal(avg.y), ExitCase::LowStepAverage, avg.params, steps, oracle);
            }
        }
        it.t += 1;
    }
    let norm = lp_norm(&it.r, q);
    let cert: Vec<T> = it.r.iter().map(|&v| v / norm).collect();
    finish(it, SolveOutcome::Certificate(cert), ExitCase::DualBudget, Vec::new(), steps, oracle)
}

/// Primal-dual sub-solver for `min_{Ax=b} ||x||_{2p}` at guess `cfg.m`.
pub fn sub_solver<T: Scalar>(a: &DenseMatrix<T>, b: &[T], cfg: &SubSolverConfig<T>) -> Result<SubSolverRun<T>> {
    let mut oracle = WeightedLsSolver::new(a.clone(), b.to_vec())?;
    sub_solver_with(&mut oracle, cfg)
}

/// Outcome of the binary search.
#[derive(Debug, Clone)]
pub struct L2pRun<T> {
    pub point: FeasiblePoint<T>,
    /// `||y||_{2p}` of the returned point.
    pub objective: T,
    pub sub_solver_calls: usize,
    pub linear_solves: usize,
    /// Guess `M` of the run that produced the returned point.
    pub final_guess: T,
    /// Every sub-solver run in search order, with its guess.
    pub runs: Vec<(T, SubSolverRun<T>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2pOptions {
    pub record_steps: bool,
}

impl Default for L2pOptions {
    fn default() -> Self {
        Self { record_steps: false }
    }
}

/// Binary search over `M = (1+eps)^P` between `||x0||_2 / n^(1/2 - 1/(2p))` and `||x0||_2`.
pub fn l2p_minimization_with<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    epsilon: T,
    p: T,
    opts: L2pOptions,
) -> Result<L2pRun<T>> {
    validate_epsilon(epsilon)?;
    if !(p >= T::one()) || !p.is_finite() {
        return Err(SolverError::InvalidInput(format!("l2p minimization needs p >= 1, got {p}")));
    }
    let n = oracle.dim();
    let solves_before = oracle.linear_solves();
    let x0 = oracle.solve_point(&vec![T::one(); n])?;
    let two_p = T::c(2.0) * p;
    let norm2 = lp_norm(&x0.y, T::c(2.0));
    let done = |point: FeasiblePoint<T>, guess, runs: Vec<(T, SubSolverRun<T>)>, oracle: &O| {
        let calls = runs.len();
        Ok(L2pRun {
            objective: lp_norm(&point.y, two_p),
            point,
            sub_solver_calls: calls,
            linear_solves: oracle.linear_solves() - solves_before,
            final_guess: guess,
            runs,
        })
    };
    // The minimum-norm point is optimal for p = 1 and for a zero demand.
    if norm2 == T::zero() || p == T::one() {
        return done(x0, norm2, Vec::new(), oracle);
    }

    let base = (T::one() + epsilon).ln();
    let lower_val = norm2 / pow_guarded(T::from_usize_lossy(n), T::c(0.5) - T::one() / two_p);
    let power = |i: i64| ((T::c(i as f64)) * base).exp();
    let mut lo = (lower_val.ln() / base).floor().to_f64_lossy() as i64;
    while power(lo) > lower_val {
        lo -= 1;
    }
    while power(lo + 1) <= lower_val {
        lo += 1;
    }
    let mut hi = (norm2.ln() / base).ceil().to_f64_lossy() as i64;
    while power(hi) < norm2 {
        hi += 1;
    }
    while power(hi - 1) >= norm2 {
        hi -= 1;
    }

    let mut runs = Vec::new();
    let mut retained: Option<(FeasiblePoint<T>, T)> = None;
    let sub = |m: T, runs: &mut Vec<(T, SubSolverRun<T>)>, oracle: &mut O| -> Result<Option<FeasiblePoint<T>>> {
        let mut cfg = SubSolverConfig::new(p, epsilon, m);
        cfg.record_steps = opts.record_steps;
        let run = sub_solver_with(oracle, &cfg)?;
        let point = run.outcome.primal().map(|y| FeasiblePoint { y: y.to_vec(), params: run.params.clone() });
        runs.push((m, run));
        Ok(point)
    };
    while lo < hi {
        let mid = (lo + hi).div_euclid(2);
        let m = power(mid);
        match sub(m, &mut runs, oracle)? {
            None => lo = mid + 1,
            Some(point) => {
                hi = mid;
                retained = Some((point, m));
            }
        }
    }
    if retained.is_none() {
        // The search never evaluated its upper endpoint; it is feasible by construction.
        let m = power(hi);
        if let Some(point) = sub(m, &mut runs, oracle)? {
            retained = Some((point, m));
        }
    }
    match retained {
        Some((point, m)) => done(point, m, runs, oracle),
        None => Err(SolverError::SearchCollapsed),
    }
}

/// `x` with `Ax = b` and `||x||_{2p}` within `(1+eps)` of optimal, up to the search granularity.
pub fn l2p_minimization<T: Scalar>(a: &DenseMatrix<T>, b: &[T], epsilon: T, p: T) -> Result<Vec<T>> {
    let mut oracle = WeightedLsSolver::new(a.clone(), b.to_vec())?;
    Ok(l2p_minimization_with(&mut oracle, epsilon, p, L2pOptions::default())?.point.y)
}

/// Both sides of the per-step energy invariant
/// `E(r_next) - E(r_prev) >= M^2 (||r_next||_q - ||r_prev||_q)`,
/// each energy evaluated by an explicit least-squares solve.
pub fn invariant_witness<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    step: &DualStep<T>,
    m: T,
    q: T,
) -> Result<(T, T)> {
    if step.r_prev == step.r_next {
        return Ok((T::zero(), T::zero()));
    }
    let lhs = oracle.energy(&step.r_next)? - oracle.energy(&step.r_prev)?;
    let rhs = m * m * (lp_norm(&step.r_next, q) - lp_norm(&step.r_prev, q));
    Ok((lhs, rhs))
}
