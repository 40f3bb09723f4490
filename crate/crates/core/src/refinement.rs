//! High-accuracy `min ||x||_p^p` for `p >= 2` by iterative refinement.
//!
//! Each round linearizes the objective at the current iterate, asks the
//! residual solver for a direction that gains `M/2` at bounded quadratic and
//! `p`-th order cost, and either takes a short step along it or halves `M`.

use log::{debug, warn};

use crate::error::{Result, SolverError};
use crate::low_precision::SolveOutcome;
use crate::ls::{FeasiblePoint, LeastSquaresOracle, WeightedLsSolver};
use crate::matrix::DenseMatrix;
use crate::numerics::{lp_norm, lp_norm_pow, pow_guarded};
use crate::residual::{residual_branch, residual_solve_with, ResidualBranch, ResidualOptions, ResidualRun};
use crate::scalar::Scalar;

/// `g = |x|^(p-2) x` and `R = 2 |x|^(p-2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGradientPair<T> {
    pub g: Vec<T>,
    pub r: Vec<T>,
}

impl<T: Scalar> ResidualGradientPair<T> {
    pub fn new(x: &[T], p: T) -> Self {
        let pm2 = p - T::c(2.0);
        let mut g = Vec::with_capacity(x.len());
        let mut r = Vec::with_capacity(x.len());
        for &xi in x {
            let w = if pm2 == T::zero() { T::one() } else { pow_guarded(xi.abs(), pm2) };
            g.push(w * xi);
            r.push(T::c(2.0) * w);
        }
        Self { g, r }
    }
}

/// `res_x(delta) = <g, delta> - <R, delta^2> - ||delta||_p^p`.
pub fn res_value<T: Scalar>(x: &[T], delta: &[T], p: T) -> T {
    assert_eq!(x.len(), delta.len(), "res_value dimension");
    let pair = ResidualGradientPair::new(x, p);
    let lin: T = pair.g.iter().zip(delta).map(|(&g, &d)| g * d).sum();
    let quad: T = pair.r.iter().zip(delta).map(|(&r, &d)| r * d * d).sum();
    lin - quad - lp_norm_pow(delta, p)
}

/// `(lower, middle, upper)` of the two-sided bound on the Bregman divergence of
/// `||.||_p^p`: with `r = |x|^(p-2)` and `g = p |x|^(p-2) x`,
/// `middle = ||x + delta||_p^p - ||x||_p^p - <g, delta>`,
/// `lower = (p/8) <r, delta^2> + 2^-(p+1) ||delta||_p^p` and
/// `upper = 2 p^2 <r, delta^2> + p^p ||delta||_p^p`.
pub fn bregman_sandwich_check<T: Scalar>(x: &[T], delta: &[T], p: T) -> (T, T, T) {
    assert_eq!(x.len(), delta.len(), "bregman_sandwich_check dimension");
    let two = T::c(2.0);
    let pair = ResidualGradientPair::new(x, p);
    let quad: T = pair.r.iter().zip(delta).map(|(&r, &d)| r / two * d * d).sum();
    let lin: T = pair.g.iter().zip(delta).map(|(&g, &d)| p * g * d).sum();
    let dp = lp_norm_pow(delta, p);
    let moved: Vec<T> = x.iter().zip(delta).map(|(&a, &b)| a + b).collect();
    let middle = lp_norm_pow(&moved, p) - lp_norm_pow(x, p) - lin;
    let lower = p / T::c(8.0) * quad + pow_guarded(two, -(p + T::one())) * dp;
    let upper = two * p * p * quad + pow_guarded(p, p) * dp;
    (lower, middle, upper)
}

/// How an improving direction is turned into a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `x <- x - delta / (64 p kappa)`.
    Fixed,
    /// Exact minimization of `||x - a delta||_p^p` over `a >= 0`. Never worse
    /// than [`StepRule::Fixed`]; costs no linear solves.
    #[default]
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub step_rule: StepRule,
    /// Residual-call budget; `None` uses `100 p^2 ln n ln(n/eps)`.
    pub max_iterations: Option<usize>,
    pub record_trace: bool,
    /// Keep every residual subproblem with its run and dual steps.
    pub record_residual: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { step_rule: StepRule::default(), max_iterations: None, record_trace: false, record_residual: false }
    }
}

/// Iterate of the refinement loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState<T> {
    pub x: FeasiblePoint<T>,
    /// Gap bound: `||x||_p^p - OPT <= 16 p M`.
    pub m: T,
    pub kappa: T,
    pub t: usize,
    pub linear_solve_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry<T> {
    pub m: T,
    /// `||x||_p^p` after the round.
    pub objective_pow: T,
    pub halved: bool,
    pub linear_solves: usize,
}

/// One residual subproblem `[A; g^T] d = [0; rhs]` posed by the loop.
#[derive(Debug, Clone)]
pub struct ResidualRecord<T> {
    /// Residual exponent `p / 2`.
    pub p: T,
    pub g: Vec<T>,
    pub rhs: T,
    pub theta: Vec<T>,
    /// Residual target `2 sqrt(kappa) M^(1/p)`.
    pub target: T,
    /// `None` when the direction space was degenerate.
    pub run: Option<ResidualRun<T>>,
}

#[derive(Debug, Clone)]
pub struct RefineReport<T> {
    pub state: RefinementState<T>,
    /// `||x||_p` at exit.
    pub objective: T,
    pub residual_calls: usize,
    pub halvings: usize,
    pub steps: usize,
    pub trace: Vec<TraceEntry<T>>,
    pub residual_log: Vec<ResidualRecord<T>>,
}

/// Default residual-call budget `100 p^2 max(ln n, 1) ln(n / eps)`.
pub fn refinement_budget(n: usize, p: f64, eps: f64) -> usize {
    let ln_n = (n as f64).ln().max(1.0);
    let b = 100.0 * p * p * ln_n * ((n as f64) / eps).ln().max(1.0);
    b.min(1e9).ceil() as usize
}

/// `argmin_{a >= 0} ||y - a d||_p^p` by safeguarded Newton on the derivative.
///
/// `a0` is a point with `phi(a0) <= phi(0)`; the result is never worse than `a0`.
fn line_search<T: Scalar>(y: &[T], d: &[T], p: T, a0: T) -> T {
    let two = T::c(2.0);
    let phi = |a: T| -> T { y.iter().zip(d).map(|(&yi, &di)| pow_guarded((yi - a * di).abs(), p)).sum() };
    // phi'(a) = -p sum d |y - a d|^(p-2) (y - a d)
    let dphi = |a: T| -> (T, T) {
        let mut g1 = T::zero();
        let mut g2 = T::zero();
        for (&yi, &di) in y.iter().zip(d) {
            let u = yi - a * di;
            let w = if p == two { T::one() } else { pow_guarded(u.abs(), p - two) };
            g1 -= di * w * u;
            g2 += (p - T::one()) * di * di * w;
        }
        (p * g1, p * g2)
    };
    if dphi(T::zero()).0 >= T::zero() {
        return a0;
    }
    // Bracket the root of the increasing derivative.
    let (mut lo, mut hi) = (T::zero(), a0.max(T::min_positive_value()));
    let mut expand = 0;
    while dphi(hi).0 < T::zero() {
        lo = hi;
        hi = hi * two;
        expand += 1;
        if expand > 200 {
            return a0;
        }
    }
    let mut a = (lo + hi) / two;
    for _ in 0..100 {
        let (g1, g2) = dphi(a);
        if g1 == T::zero() {
            break;
        }
        if g1 < T::zero() {
            lo = a;
        } else {
            hi = a;
        }
        let newton = if g2 > T::zero() { a - g1 / g2 } else { T::nan() };
        let next = if newton > lo && newton < hi { newton } else { (lo + hi) / two };
        if (next - a).abs() <= T::epsilon() * a.abs() * T::c(4.0) || hi - lo <= T::epsilon() * hi {
            a = next;
            break;
        }
        a = next;
    }
    if phi(a) <= phi(a0) {
        a
    } else {
        a0
    }
}

/// Refinement against any least-squares backend, minimizing `||y||_p^p` over
/// its feasible set. Returns the final point together with the run report.
pub fn lp_refine_with<T: Scalar, O: LeastSquaresOracle<T> + ?Sized>(
    oracle: &mut O,
    p: T,
    epsilon: T,
    opts: RefineOptions,
) -> Result<RefineReport<T>> {
    if !(p >= T::c(2.0)) || !p.is_finite() {
        return Err(SolverError::InvalidInput(format!("refinement needs p >= 2, got {p}")));
    }
    crate::low_precision::validate_epsilon(epsilon)?;
    let n = oracle.dim();
    let solves_before = oracle.linear_solves();
    let two = T::c(2.0);
    let sixteen_p = T::c(16.0) * p;
    let p_res = p / two;
    let kappa = match residual_branch(p_res, n) {
        ResidualBranch::SmallP => T::one(),
        ResidualBranch::LargeP => p / (p - two),
    };
    let fixed_step = T::one() / (T::c(64.0) * p * kappa);
    let budget = opts
        .max_iterations
        .unwrap_or_else(|| refinement_budget(n, p.to_f64_lossy(), epsilon.to_f64_lossy()));
    let soft_bound = budget / 100;

    let mut x = oracle.solve_point(&vec![T::one(); n])?;
    let mut obj = lp_norm_pow(&x.y, p);
    let mut m = obj / sixteen_p;
    let stop = epsilon / (sixteen_p * (T::one() + epsilon));
    let (mut t, mut halvings, mut steps) = (0usize, 0usize, 0usize);
    let mut trace = Vec::new();
    let mut residual_log = Vec::new();
    let res_opts = ResidualOptions { record_steps: opts.record_residual, ..ResidualOptions::default() };

    while m > T::zero() && m >= stop * obj {
        if t >= budget {
            return Err(SolverError::NonConvergence(t));
        }
        if t == soft_bound && soft_bound > 0 {
            warn!("refinement passed {soft_bound} residual calls");
        }
        let pair = ResidualGradientPair::new(&x.y, p);
        let scale = pow_guarded(m, (two - p) / p);
        let theta: Vec<T> = pair.r.iter().map(|&r| r * scale).collect();
        let target = two * kappa.sqrt() * pow_guarded(m, T::one() / p);
        let run = match residual_solve_with(oracle, p_res, &pair.g, m / two, &theta, target, res_opts) {
            Ok(run) => Some(run),
            // g is orthogonal to every feasible direction: x is stationary.
            Err(SolverError::DegenerateDirection) => None,
            Err(e) => return Err(e),
        };
        let delta = match &run {
            Some(ResidualRun { outcome: SolveOutcome::Primal(y), params, .. }) => {
                Some(FeasiblePoint { y: y.clone(), params: params.clone() })
            }
            _ => None,
        };
        if opts.record_residual {
            residual_log.push(ResidualRecord { p: p_res, g: pair.g.clone(), rhs: m / two, theta, target, run });
        }
        let halved = match delta {
            Some(dir) if pair.r.iter().zip(&dir.y).map(|(&r, &di)| r * di * di).sum::<T>() < two * m => {
                let step = match opts.step_rule {
                    StepRule::Fixed => fixed_step,
                    StepRule::LineSearch => line_search(&x.y, &dir.y, p, fixed_step),
                };
                x = x.stepped(&dir, step);
                obj = lp_norm_pow(&x.y, p);
                steps += 1;
                false
            }
            _ => {
                m = m / two;
                halvings += 1;
                true
            }
        };
        t += 1;
        if opts.record_trace {
            trace.push(TraceEntry { m, objective_pow: obj, halved, linear_solves: oracle.linear_solves() - solves_before });
        }
    }
    debug!("refinement: {t} rounds, {steps} steps, {halvings} halvings");
    let linear_solve_count = oracle.linear_solves() - solves_before;
    Ok(RefineReport {
        objective: lp_norm(&x.y, p),
        state: RefinementState { x, m, kappa, t, linear_solve_count },
        residual_calls: t,
        halvings,
        steps,
        trace,
        residual_log,
    })
}

/// `argmin_{Ax=b} ||x||_p` to relative accuracy `epsilon`, `p >= 2`.
pub fn lp_refine<T: Scalar>(a: &DenseMatrix<T>, b: &[T], p: T, epsilon: T) -> Result<(Vec<T>, RefineReport<T>)> {
    lp_refine_opts(a, b, p, epsilon, RefineOptions::default())
}

pub fn lp_refine_opts<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &[T],
    p: T,
    epsilon: T,
    opts: RefineOptions,
) -> Result<(Vec<T>, RefineReport<T>)> {
    let mut oracle = WeightedLsSolver::new(a.clone(), b.to_vec())?;
    let report = lp_refine_with(&mut oracle, p, epsilon, opts)?;
    Ok((report.state.x.y.clone(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn identity_returns_demand() {
        let b = vec![0.3, -1.2, 2.0, 0.0];
        let (x, rep) = lp_refine(&DenseMatrix::identity(4), &b, 4.0, 1e-8).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!(close(*xi, *bi, 1e-12));
        }
        assert_eq!(rep.steps, 0);
    }

    #[test]
    fn symmetric_two_variable_optimum() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let (x, _) = lp_refine(&a, &[1.0], 4.0, 1e-10).unwrap();
        assert!(close(x[0], 0.5, 1e-9) && close(x[1], 0.5, 1e-9));
        assert!(close(lp_norm_pow(&x, 4.0), 0.125, 1e-10));
    }

    // x1^3 = lam, x2^3 = 2 lam, x1 + 2 x2 = 1, solved for lam by bisection.
    fn weighted_pair_oracle() -> [f64; 2] {
        let f = |lam: f64| lam.cbrt() + 2.0 * (2.0 * lam).cbrt() - 1.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = 0.5 * (lo + hi);
        [lam.cbrt(), (2.0 * lam).cbrt()]
    }

    #[test]
    fn weighted_pair_matches_stationarity() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let want = weighted_pair_oracle();
        for rule in [StepRule::LineSearch, StepRule::Fixed] {
            let opts = RefineOptions { step_rule: rule, ..Default::default() };
            let (x, _) = lp_refine_opts(&a, &[1.0], 4.0, 1e-8, opts).unwrap();
            let opt = lp_norm_pow(&want, 4.0);
            assert!(lp_norm_pow(&x, 4.0) <= opt * (1.0 + 1e-8), "{rule:?}: {x:?} vs {want:?}");
            assert!(close(x[0] + 2.0 * x[1], 1.0, 1e-12));
        }
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.5, -1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 1.0, -1.0, 3.0, 0.5]]).unwrap();
        let b = [1.0, -2.0];
        let opts = RefineOptions { record_trace: true, step_rule: StepRule::Fixed, ..Default::default() };
        let (x, rep) = lp_refine_opts(&a, &b, 6.0, 1e-6, opts).unwrap();
        assert!(rep.trace.windows(2).all(|w| w[1].objective_pow <= w[0].objective_pow * (1.0 + 1e-12)));
        assert!(rep.trace.iter().filter(|e| e.halved).count() == rep.halvings);
        let ax = a.mul_vec(&x);
        assert!(close(ax[0], 1.0, 1e-10) && close(ax[1], -2.0, 1e-10));
        let (x_ls, _) = lp_refine(&a, &b, 6.0, 1e-6).unwrap();
        assert!(close(lp_norm(&x, 6.0), lp_norm(&x_ls, 6.0), 2e-6));
    }

    #[test]
    fn res_value_examples() {
        assert_eq!(res_value(&[1.0, -2.0], &[0.0, 0.0], 4.0), 0.0);
        assert!(close(res_value(&[1.0, 0.0], &[0.1, 0.0], 2.0), 0.07, 1e-14));
    }

    #[test]
    fn gradient_pair_zero_coordinates() {
        let pair = ResidualGradientPair::new(&[0.0, -2.0, 3.0], 4.0);
        assert_eq!(pair.g, vec![0.0, -8.0, 27.0]);
        assert_eq!(pair.r, vec![0.0, 8.0, 18.0]);
    }

    #[test]
    fn sandwich_closed_forms() {
        assert_eq!(bregman_sandwich_check(&[1.0, 2.0], &[0.0, 0.0], 4.0), (0.0, 0.0, 0.0));
        let d = [0.5, -1.5];
        let dp = lp_norm_pow(&d, 4.0);
        let (lo, mid, up) = bregman_sandwich_check(&[0.0, 0.0], &d, 4.0);
        assert!(close(lo, dp / 32.0, 1e-14) && close(mid, dp, 1e-14) && close(up, 256.0 * dp, 1e-14));
    }

    #[test]
    fn invalid_inputs() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(matches!(lp_refine(&a, &[1.0], 1.5, 1e-6), Err(SolverError::InvalidInput(_))));
        assert!(matches!(lp_refine(&a, &[1.0], 4.0, 0.0), Err(SolverError::InvalidInput(_))));
        let opts = RefineOptions { max_iterations: Some(2), ..Default::default() };
        assert!(matches!(lp_refine_opts(&a, &[1.0], 4.0, 1e-10, opts), Err(SolverError::NonConvergence(2))));
    }

    #[test]
    fn line_search_never_worse_than_fixed() {
        let y = [1.0, -0.5, 2.0];
        let d = [0.8, 0.1, 1.5];
        let phi = |a: f64| lp_norm_pow(&[y[0] - a * d[0], y[1] - a * d[1], y[2] - a * d[2]], 6.0);
        let a = line_search(&y, &d, 6.0, 0.01);
        assert!(phi(a) <= phi(0.01));
        // stationary: derivative sign change around a
        assert!(phi(a) <= phi(a * (1.0 + 1e-6)) && phi(a) <= phi(a * (1.0 - 1e-6)));
    }

    proptest! {
        #[test]
        fn sandwich_ordering(
            x in prop::collection::vec(-3.0f64..3.0, 1..8),
            seed in prop::collection::vec(-3.0f64..3.0, 8),
            pi in 0usize..3,
        ) {
            let p = [2.0, 4.0, 8.0][pi];
            let delta = &seed[..x.len()];
            let (lo, mid, up) = bregman_sandwich_check(&x, delta, p);
            let tol = 1e-10 * (1.0 + mid.abs());
            prop_assert!(lo <= mid + tol && mid <= up + tol, "{lo} {mid} {up}");
        }

        #[test]
        fn res_bounds_true_decrease(
            x in prop::collection::vec(-3.0f64..3.0, 1..8),
            seed in prop::collection::vec(-3.0f64..3.0, 8),
            pi in 0usize..3,
        ) {
            let p = [2.0, 4.0, 8.0][pi];
            let delta = &seed[..x.len()];
            let res = res_value(&x, delta, p);
            let base = lp_norm_pow(&x, p);
            let moved = |c: f64| lp_norm_pow(&x.iter().zip(delta).map(|(&a, &d)| a - c * d).collect::<Vec<_>>(), p);
            let tol = 1e-9 * (1.0 + base + moved(1.0 / p) + moved(16.0));
            prop_assert!(base - moved(1.0 / p) >= res - tol);
            prop_assert!(base - moved(16.0) <= 16.0 * p * res + tol);
        }
    }
}
