//! General-form regression `min ||Nx - v||_p s.t. Ax = b`, and `1 < p < 2`
//! through the dual problem.

use std::ops::Range;

use crate::error::{Result, SolverError};
use crate::ls::{feasibility_tolerance, weighted_gram, FeasiblePoint, LeastSquaresOracle, SymmetricFactor, WeightedLsSolver};
use crate::matrix::{axpy, dot, norm2, DenseMatrix, WeightVector};
use crate::numerics::{dual_exponent, lp_norm, pow_guarded};
use crate::refinement::{lp_refine_with, RefineOptions, RefineReport};
use crate::scalar::Scalar;

/// `min ||Nx - v||_p` subject to `Ax = b`; `A` may have zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralInstance<T> {
    pub n_mat: DenseMatrix<T>,
    pub v: Vec<T>,
    pub a: DenseMatrix<T>,
    pub b: Vec<T>,
    pub p: T,
}

impl<T: Scalar> GeneralInstance<T> {
    pub fn new(n_mat: DenseMatrix<T>, v: Vec<T>, a: DenseMatrix<T>, b: Vec<T>, p: T) -> Result<Self> {
        let inst = Self { n_mat, v, a, b, p };
        inst.validate()?;
        Ok(inst)
    }

    /// Unconstrained `min ||Nx - v||_p`.
    pub fn unconstrained(n_mat: DenseMatrix<T>, v: Vec<T>, p: T) -> Result<Self> {
        let cols = n_mat.cols();
        Self::new(n_mat, v, DenseMatrix::empty(cols), Vec::new(), p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.len() != self.n_mat.rows() {
            return Err(SolverError::DimensionMismatch(format!(
                "v has length {}, N has {} rows",
                self.v.len(),
                self.n_mat.rows()
            )));
        }
        if self.a.cols() != self.n_mat.cols() {
            return Err(SolverError::DimensionMismatch(format!(
                "A has {} columns, N has {}",
                self.a.cols(),
                self.n_mat.cols()
            )));
        }
        if self.b.len() != self.a.rows() {
            return Err(SolverError::DimensionMismatch(format!("b has length {}, A has {} rows", self.b.len(), self.a.rows())));
        }
        if self.v.iter().chain(&self.b).any(|x| !x.is_finite()) {
            return Err(SolverError::InvalidInput("non-finite right-hand side".into()));
        }
        if !(self.p >= T::one()) || !self.p.is_finite() {
            return Err(SolverError::InvalidInput(format!("norm exponent must be finite and >= 1, got {}", self.p)));
        }
        Ok(())
    }

    /// Number of decision variables `x`.
    pub fn vars(&self) -> usize {
        self.n_mat.cols()
    }

    /// `Nx - v`.
    pub fn residual(&self, x: &[T]) -> Vec<T> {
        self.n_mat.mul_vec(x).iter().zip(&self.v).map(|(&a, &b)| a - b).collect()
    }

    pub fn objective(&self, x: &[T]) -> T {
        lp_norm(&self.residual(x), self.p)
    }
}

/// `min ||y_obj||_p` subject to `A y = b`, where the objective covers only the
/// coordinates in `objective_block`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionInstance<T> {
    pub a: DenseMatrix<T>,
    pub b: Vec<T>,
    pub p: T,
    pub objective_block: Range<usize>,
}

/// Lifted form of a [`GeneralInstance`] over `[x; z]`:
/// `[[N, -I], [A, 0]] [x; z] = [v; b]`, objective `||z||_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedInstance<T> {
    pub instance: RegressionInstance<T>,
    /// Columns holding `x`.
    pub x_block: Range<usize>,
}

impl<T: Scalar> LiftedInstance<T> {
    /// Projects a lifted solution back to `x`.
    pub fn project(&self, y: &[T]) -> Vec<T> {
        y[self.x_block.clone()].to_vec()
    }
}

pub fn lift_general<T: Scalar>(inst: &GeneralInstance<T>) -> Result<LiftedInstance<T>> {
    inst.validate()?;
    let (m, n, s) = (inst.n_mat.rows(), inst.vars(), inst.a.rows());
    let cols = n + m;
    let mut data = Vec::with_capacity((m + s) * cols);
    for i in 0..m {
        data.extend_from_slice(inst.n_mat.row(i));
        data.extend((0..m).map(|j| if i == j { -T::one() } else { T::zero() }));
    }
    for i in 0..s {
        data.extend_from_slice(inst.a.row(i));
        data.extend(std::iter::repeat(T::zero()).take(m));
    }
    let a = DenseMatrix::new(m + s, cols, data)?;
    let b = inst.v.iter().chain(&inst.b).copied().collect();
    Ok(LiftedInstance {
        instance: RegressionInstance { a, b, p: inst.p, objective_block: n..cols },
        x_block: 0..n,
    })
}

/// Least-squares backend on the lifted matrix: the objective coordinates
/// carry the weights, the `x` block is unweighted.
#[derive(Debug, Clone)]
pub struct LiftedLs<T> {
    inner: WeightedLsSolver<T>,
    block: Range<usize>,
}

impl<T: Scalar> LiftedLs<T> {
    pub fn new(lifted: &LiftedInstance<T>) -> Result<Self> {
        let inst = &lifted.instance;
        Ok(Self { inner: WeightedLsSolver::new(inst.a.clone(), inst.b.clone())?, block: inst.objective_block.clone() })
    }

    fn full_weights(&self, w: &[T]) -> Vec<T> {
        let mut full = vec![T::zero(); self.inner.matrix().cols()];
        full[self.block.clone()].copy_from_slice(w);
        full
    }

    fn split(&self, full: Vec<T>) -> FeasiblePoint<T> {
        let y = full[self.block.clone()].to_vec();
        let mut params = full;
        params.truncate(self.block.start);
        FeasiblePoint { y, params }
    }
}

impl<T: Scalar> LeastSquaresOracle<T> for LiftedLs<T> {
    fn dim(&self) -> usize {
        self.block.len()
    }

    fn solve_point(&mut self, w: &[T]) -> Result<FeasiblePoint<T>> {
        let full = self.full_weights(w);
        let x = self.inner.solve(&full)?.x;
        Ok(self.split(x))
    }

    fn solve_direction(&mut self, w: &[T], g: &[T], target: T) -> Result<FeasiblePoint<T>> {
        let full = self.full_weights(w);
        let mut gf = vec![T::zero(); full.len()];
        gf[self.block.clone()].copy_from_slice(g);
        let x = self.inner.solve_direction(&full, &gf, target)?.x;
        Ok(self.split(x))
    }

    fn linear_solves(&self) -> usize {
        self.inner.linear_solves()
    }
}

struct StructuredFactor<T> {
    weights: Vec<T>,
    /// `H = N^T W N`.
    h: SymmetricFactor<T>,
    /// Rows `H^+ a_i` and the factor of `A H^+ A^T`, when `A` has rows.
    constrained: Option<(Vec<Vec<T>>, SymmetricFactor<T>)>,
}

/// Least-squares backend for `min <w, (Nx - v)^2> s.t. Ax = b` that works with
/// `N^T W N` (vars x vars) and `A (N^T W N)^+ A^T` (constraints x constraints)
/// instead of the lifted system.
pub struct StructuredLs<T> {
    n_mat: DenseMatrix<T>,
    n_t: DenseMatrix<T>,
    v: Vec<T>,
    a: DenseMatrix<T>,
    b: Vec<T>,
    factor: Option<StructuredFactor<T>>,
    solves: usize,
}

impl<T: Scalar> StructuredLs<T> {
    pub fn new(inst: &GeneralInstance<T>) -> Result<Self> {
        inst.validate()?;
        if inst.n_mat.rows() == 0 {
            return Err(SolverError::InvalidInput("N must have at least one row".into()));
        }
        Ok(Self {
            n_mat: inst.n_mat.clone(),
            n_t: inst.n_mat.transpose(),
            v: inst.v.clone(),
            a: inst.a.clone(),
            b: inst.b.clone(),
            factor: None,
            solves: 0,
        })
    }

    fn prepare(&mut self, w: &[T]) -> Result<()> {
        if w.len() != self.n_mat.rows() {
            return Err(SolverError::DimensionMismatch(format!(
                "weights have length {}, N has {} rows",
                w.len(),
                self.n_mat.rows()
            )));
        }
        if matches!(&self.factor, Some(f) if f.weights == w) {
            return Ok(());
        }
        let floored = WeightVector::new(w.to_vec())?.floored();
        let h = SymmetricFactor::new(self.n_t.rows(), weighted_gram(&self.n_t, &floored))?;
        let constrained = if self.a.rows() > 0 {
            let k: Vec<Vec<T>> = (0..self.a.rows()).map(|i| h.solve(self.a.row(i))).collect();
            let s = self.a.rows();
            let mut gram = vec![T::zero(); s * s];
            for i in 0..s {
                for j in 0..=i {
                    let val = dot(self.a.row(i), &k[j]);
                    gram[i * s + j] = val;
                    gram[j * s + i] = val;
                }
            }
            Some((k, SymmetricFactor::new(s, gram)?))
        } else {
            None
        };
        self.factor = Some(StructuredFactor { weights: w.to_vec(), h, constrained });
        Ok(())
    }

    /// Adds `sum_i lambda_i H^+ a_i` where `A H^+ A^T lambda = rhs`.
    fn correct(&self, x: &mut [T], rhs: &[T]) {
        if let Some((k, s)) = &self.factor.as_ref().expect("prepared").constrained {
            let lambda = s.solve(rhs);
            for (ki, &li) in k.iter().zip(&lambda) {
                axpy(li, ki, x);
            }
        }
    }

    /// `argmin_{Ax=b} <w, (Nx - v)^2>`.
    pub fn solve_x(&mut self, w: &[T]) -> Result<Vec<T>> {
        self.prepare(w)?;
        self.solves += 1;
        let wv: Vec<T> = WeightVector::new(w.to_vec())?.floored().iter().zip(&self.v).map(|(&a, &b)| a * b).collect();
        let f = self.factor.as_ref().expect("prepared");
        let mut x = f.h.solve(&self.n_mat.tmul_vec(&wv));
        if self.a.rows() > 0 {
            let gap: Vec<T> = self.b.iter().zip(self.a.mul_vec(&x)).map(|(&bi, ax)| bi - ax).collect();
            self.correct(&mut x, &gap);
            let res = norm2(&self.a.mul_vec(&x).iter().zip(&self.b).map(|(&ax, &bi)| ax - bi).collect::<Vec<T>>());
            let tol = feasibility_tolerance(&self.b);
            if !(res <= tol) {
                return Err(SolverError::InfeasibleDemand { residual: res.to_f64_lossy(), tolerance: tol.to_f64_lossy() });
            }
        }
        Ok(x)
    }
}

impl<T: Scalar> LeastSquaresOracle<T> for StructuredLs<T> {
    fn dim(&self) -> usize {
        self.n_mat.rows()
    }

    fn solve_point(&mut self, w: &[T]) -> Result<FeasiblePoint<T>> {
        let x = self.solve_x(w)?;
        let y = self.n_mat.mul_vec(&x).iter().zip(&self.v).map(|(&a, &b)| a - b).collect();
        Ok(FeasiblePoint { y, params: x })
    }

    fn solve_direction(&mut self, w: &[T], g: &[T], target: T) -> Result<FeasiblePoint<T>> {
        if g.len() != self.n_mat.rows() {
            return Err(SolverError::DimensionMismatch(format!("g has length {}, expected {}", g.len(), self.n_mat.rows())));
        }
        self.prepare(w)?;
        if target == T::zero() {
            return Ok(FeasiblePoint { y: vec![T::zero(); g.len()], params: vec![T::zero(); self.n_mat.cols()] });
        }
        self.solves += 1;
        let c = self.n_mat.tmul_vec(g);
        let u = self.factor.as_ref().expect("prepared").h.solve(&c);
        let mut h = u.clone();
        if self.a.rows() > 0 {
            let au: Vec<T> = self.a.mul_vec(&u).iter().map(|&v| -v).collect();
            self.correct(&mut h, &au);
        }
        let ch = dot(&c, &h);
        // ch is the squared W^-1 norm of the part of g reachable by feasible directions.
        let floored = WeightVector::new(w.to_vec())?.floored();
        let gg: T = g.iter().zip(floored.iter()).map(|(&gi, &wi)| gi * gi / wi).sum();
        if !(gg > T::zero()) || !(ch > T::PIVOT_THRESHOLD * gg) {
            return Err(SolverError::DegenerateDirection);
        }
        let lambda = target / ch;
        let dx: Vec<T> = h.iter().map(|&v| v * lambda).collect();
        Ok(FeasiblePoint { y: self.n_mat.mul_vec(&dx), params: dx })
    }

    fn linear_solves(&self) -> usize {
        self.solves
    }
}

/// `argmin_{Ax=b} <w, (Nx - v)^2>` through the factored normal equations
/// `x = H^+ (N^T W v + A^T (A H^+ A^T)^+ (b - A H^+ N^T W v))`, `H = N^T W N`.
pub fn solve_general_structured<T: Scalar>(inst: &GeneralInstance<T>, w: &WeightVector<T>) -> Result<Vec<T>> {
    StructuredLs::new(inst)?.solve_x(w.as_slice())
}

/// High-accuracy solve of a general instance with `p >= 2`; returns `x` and the run report.
pub fn refine_general<T: Scalar>(inst: &GeneralInstance<T>, epsilon: T, opts: RefineOptions) -> Result<(Vec<T>, RefineReport<T>)> {
    let mut oracle = StructuredLs::new(inst)?;
    let report = lp_refine_with(&mut oracle, inst.p, epsilon, opts)?;
    Ok((report.state.x.params.clone(), report))
}

/// Result of [`solve_small_p_report`].
#[derive(Debug, Clone)]
pub struct SmallPRun<T> {
    pub x: Vec<T>,
    /// Optimal dual vector `y` with `<b, y> = 1`.
    pub dual: Vec<T>,
    pub dual_report: RefineReport<T>,
    pub linear_solves: usize,
}

/// `argmin_{Ax=b} ||x||_p` for `1 < p < 2`.
pub fn solve_small_p<T: Scalar>(a: &DenseMatrix<T>, b: &[T], p: T, epsilon: T) -> Result<Vec<T>> {
    Ok(solve_small_p_report(a, b, p, epsilon, RefineOptions::default())?.x)
}

/// Solves the dual `min_{<b,y>=1} ||A^T y||_{p'}` by refinement, maps it back
/// to `x = (<b,y> / ||A^T y||^{p'}) sign(A^T y) |A^T y|^{p'-1}` and projects
/// onto `Ax = b` with `x += A^T (A A^T)^+ (b - Ax)`.
pub fn solve_small_p_report<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &[T],
    p: T,
    epsilon: T,
    opts: RefineOptions,
) -> Result<SmallPRun<T>> {
    if !(p > T::one() && p < T::c(2.0)) {
        return Err(SolverError::InvalidInput(format!("small-p reduction needs 1 < p < 2, got {p}")));
    }
    crate::low_precision::validate_epsilon(epsilon)?;
    if b.len() != a.rows() {
        return Err(SolverError::DimensionMismatch(format!("b has length {}, A has {} rows", b.len(), a.rows())));
    }
    let n = a.cols();
    if a.rows() == 0 || b.iter().all(|&v| v == T::zero()) {
        return Ok(SmallPRun {
            x: vec![T::zero(); n],
            dual: vec![T::zero(); a.rows()],
            dual_report: empty_report(),
            linear_solves: 0,
        });
    }
    let pd = dual_exponent(p);
    let nf = T::from_usize_lossy(n);
    let eps_dual = epsilon.min(T::one() / (nf * nf * nf));
    let dual_inst = GeneralInstance::new(
        a.transpose(),
        vec![T::zero(); n],
        DenseMatrix::from_rows(&[b])?,
        vec![T::one()],
        pd,
    )?;
    let mut oracle = StructuredLs::new(&dual_inst)?;
    let report = lp_refine_with(&mut oracle, pd, eps_dual, opts)?;
    let z = &report.state.x.y;
    let y = report.state.x.params.clone();
    let zn = lp_norm(z, pd);
    if !(zn > T::epsilon() * norm2(&y)) {
        return Err(SolverError::DualDegenerate);
    }
    let by = dot(b, &y);
    let scale = by / (pow_guarded(zn, pd - T::one()) * zn);
    let mut x: Vec<T> = z.iter().map(|&zi| scale * zi.signum() * pow_guarded(zi.abs(), pd - T::one())).collect();
    let ax = a.mul_vec(&x);
    let gap: Vec<T> = b.iter().zip(&ax).map(|(&bi, &v)| bi - v).collect();
    let mut proj = WeightedLsSolver::new(a.clone(), gap)?;
    let corr = proj.solve(&vec![T::one(); n])?.x;
    axpy(T::one(), &corr, &mut x);
    Ok(SmallPRun { x, dual: y, linear_solves: oracle.linear_solves() + proj.linear_solves(), dual_report: report })
}

/// `argmin_x ||Nx - v||_p` for `1 < p < 2` and an unconstrained instance.
///
/// The dual is `min ||y||_{p'}` over `N^T y = 0, <v, y> = 1`, solved by
/// refinement. The optimal residual `v - Nx` is
/// `sign(y) |y|^{p'-1} / ||y||_{p'}^{p'}`, and `x` is recovered from it by
/// least squares.
pub fn solve_small_p_general<T: Scalar>(inst: &GeneralInstance<T>, epsilon: T, opts: RefineOptions) -> Result<SmallPRun<T>> {
    inst.validate()?;
    let p = inst.p;
    if !(p > T::one() && p < T::c(2.0)) {
        return Err(SolverError::InvalidInput(format!("small-p reduction needs 1 < p < 2, got {p}")));
    }
    if inst.a.rows() > 0 {
        return Err(SolverError::InvalidInput("small-p general form supports unconstrained instances only".into()));
    }
    crate::low_precision::validate_epsilon(epsilon)?;
    let (m, n) = (inst.n_mat.rows(), inst.vars());
    let mut ls = StructuredLs::new(inst)?;
    // Exact fit: the dual is infeasible and the optimum is 0.
    let x_ls = ls.solve_x(&vec![T::one(); m])?;
    if norm2(&inst.residual(&x_ls)) <= T::FEASIBILITY_TOL * (T::one() + norm2(&inst.v)) {
        return Ok(SmallPRun { x: x_ls, dual: vec![T::zero(); m], dual_report: empty_report(), linear_solves: 1 });
    }
    let pd = dual_exponent(p);
    let mf = T::from_usize_lossy(m);
    let eps_dual = epsilon.min(T::one() / (mf * mf * mf));
    let dual_a = inst.n_mat.transpose().with_row(&inst.v)?;
    let mut rhs = vec![T::zero(); n];
    rhs.push(T::one());
    let mut oracle = WeightedLsSolver::new(dual_a, rhs)?;
    let report = lp_refine_with(&mut oracle, pd, eps_dual, opts)?;
    let y = report.state.x.y.clone();
    let yn = lp_norm(&y, pd);
    if !(yn > T::zero()) {
        return Err(SolverError::DualDegenerate);
    }
    let scale = dot(&inst.v, &y) / (pow_guarded(yn, pd - T::one()) * yn);
    let target: Vec<T> = inst
        .v
        .iter()
        .zip(&y)
        .map(|(&vi, &yi)| vi - scale * yi.signum() * pow_guarded(yi.abs(), pd - T::one()))
        .collect();
    let fit = GeneralInstance::unconstrained(inst.n_mat.clone(), target, T::c(2.0))?;
    let mut fit_ls = StructuredLs::new(&fit)?;
    let x = fit_ls.solve_x(&vec![T::one(); m])?;
    Ok(SmallPRun {
        x,
        dual: y,
        linear_solves: 1 + oracle.linear_solves() + fit_ls.linear_solves(),
        dual_report: report,
    })
}

fn empty_report<T: Scalar>() -> RefineReport<T> {
    RefineReport {
        state: crate::refinement::RefinementState {
            x: FeasiblePoint { y: Vec::new(), params: Vec::new() },
            m: T::zero(),
            kappa: T::one(),
            t: 0,
            linear_solve_count: 0,
        },
        objective: T::zero(),
        residual_calls: 0,
        halvings: 0,
        steps: 0,
        trace: Vec::new(),
        residual_log: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ls::solve_weighted_ls;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn random_matrix(rng: &mut Xoshiro256PlusPlus, rows: usize, cols: usize) -> DenseMatrix<f64> {
        DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn lift_shapes_and_projection() {
        let n = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let a = DenseMatrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let inst = GeneralInstance::new(n, vec![1.0, 0.0, -1.0], a, vec![0.5], 3.0).unwrap();
        let lifted = lift_general(&inst).unwrap();
        assert_eq!((lifted.instance.a.rows(), lifted.instance.a.cols()), (4, 5));
        assert_eq!(lifted.instance.a.row(1), &[3.0, 4.0, 0.0, -1.0, 0.0]);
        assert_eq!(lifted.instance.a.row(3), &[1.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(lifted.instance.b, vec![1.0, 0.0, -1.0, 0.5]);
        assert_eq!(lifted.instance.objective_block, 2..5);
        assert_eq!(lifted.project(&[7.0, 8.0, 0.0, 0.0, 0.0]), vec![7.0, 8.0]);
    }

    #[test]
    fn overdetermined_least_squares() {
        let inst = GeneralInstance::unconstrained(DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap(), vec![0.0, 1.0], 2.0).unwrap();
        let x = solve_general_structured(&inst, &WeightVector::ones(2)).unwrap();
        assert!(close(x[0], 0.5, 1e-14));
        let z = inst.residual(&x);
        assert!(close(z[0], 0.5, 1e-14) && close(z[1], -0.5, 1e-14));
        let (xr, _) = refine_general(&inst, 1e-10, RefineOptions::default()).unwrap();
        assert!(close(xr[0], 0.5, 1e-9));
    }

    #[test]
    fn identity_residual_with_constraint() {
        let inst = GeneralInstance::new(
            DenseMatrix::identity(2),
            vec![0.0, 0.0],
            DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap(),
            vec![1.0],
            2.0,
        )
        .unwrap();
        let x = solve_general_structured(&inst, &WeightVector::ones(2)).unwrap();
        assert!(close(x[0], 0.5, 1e-14) && close(x[1], 0.5, 1e-14));
    }

    #[test]
    fn structured_agrees_with_lifted_solve() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for trial in 0..30 {
            let (m, n, s) = (rng.gen_range(3..9), rng.gen_range(1..4), trial % 3);
            let n_mat = random_matrix(&mut rng, m, n.max(1));
            let a = if s == 0 { DenseMatrix::empty(n) } else { random_matrix(&mut rng, s.min(n - 1).max(0), n) };
            let s = a.rows();
            let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let inst = GeneralInstance::new(n_mat, v, a, b, 2.0).unwrap();
            let w = WeightVector::new((0..m).map(|_| rng.gen_range(0.1..3.0)).collect()).unwrap();
            let x = solve_general_structured(&inst, &w).unwrap();
            let lifted = lift_general(&inst).unwrap();
            let mut full = vec![0.0; n];
            full.extend_from_slice(w.as_slice());
            let sol = solve_weighted_ls(&lifted.instance.a, &lifted.instance.b, &WeightVector::new(full).unwrap()).unwrap();
            let xl = lifted.project(&sol.x);
            for (u, v) in x.iter().zip(&xl) {
                assert!(close(*u, *v, 1e-8), "trial {trial}: {x:?} vs {xl:?}");
            }
        }
    }

    #[test]
    fn structured_direction_is_feasible_and_hits_target() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let inst = GeneralInstance::new(
            random_matrix(&mut rng, 7, 4),
            vec![0.0; 7],
            random_matrix(&mut rng, 2, 4),
            vec![0.0, 0.0],
            4.0,
        )
        .unwrap();
        let mut oracle = StructuredLs::new(&inst).unwrap();
        let g: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..7).map(|_| rng.gen_range(0.5..2.0)).collect();
        let d = oracle.solve_direction(&w, &g, 0.7).unwrap();
        assert!(close(dot(&g, &d.y), 0.7, 1e-10));
        assert!(norm2(&inst.a.mul_vec(&d.params)) < 1e-10);
        let nd = inst.n_mat.mul_vec(&d.params);
        assert!(nd.iter().zip(&d.y).all(|(u, v)| close(*u, *v, 1e-12)));
        // lifted backend gives the same direction
        let mut lifted = LiftedLs::new(&lift_general(&inst).unwrap()).unwrap();
        let dl = lifted.solve_direction(&w, &g, 0.7).unwrap();
        assert!(d.y.iter().zip(&dl.y).all(|(u, v)| close(*u, *v, 1e-7)));
    }

    #[test]
    fn stationary_gradient_is_degenerate_for_both_backends() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let inst = GeneralInstance::unconstrained(random_matrix(&mut rng, 5, 2), vec![0.3, -1.0, 0.5, 0.2, 0.9], 2.0).unwrap();
        let ones = vec![1.0; 5];
        let mut structured = StructuredLs::new(&inst).unwrap();
        let mut lifted = LiftedLs::new(&lift_general(&inst).unwrap()).unwrap();
        // The least-squares point is optimal for p = 2, so its gradient has no feasible component.
        let g: Vec<f64> = structured.solve_point(&ones).unwrap().y.iter().map(|v| 2.0 * v).collect();
        for target in [1.0, 1e-9] {
            assert!(matches!(structured.solve_direction(&ones, &g, target), Err(SolverError::DegenerateDirection)));
            assert!(matches!(lifted.solve_direction(&ones, &g, target), Err(SolverError::DegenerateDirection)));
        }
    }

    #[test]
    fn tiny_targets_are_hit_by_the_lifted_backend() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let inst = GeneralInstance::unconstrained(random_matrix(&mut rng, 6, 3), vec![0.0; 6], 4.0).unwrap();
        let mut lifted = LiftedLs::new(&lift_general(&inst).unwrap()).unwrap();
        let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for target in [1e-3, 1e-9, 1e-14] {
            let d = lifted.solve_direction(&[1.0; 6], &g, target).unwrap();
            assert!(close(dot(&g, &d.y), target, 1e-8), "target {target}");
        }
    }

    #[test]
    fn lifted_refinement_matches_structured() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        for p in [2.0, 4.0] {
            let inst = GeneralInstance::unconstrained(random_matrix(&mut rng, 6, 2), (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(), p).unwrap();
            let (_, structured) = refine_general(&inst, 1e-8, RefineOptions::default()).unwrap();
            let mut lifted = LiftedLs::new(&lift_general(&inst).unwrap()).unwrap();
            let report = crate::refinement::lp_refine_with(&mut lifted, p, 1e-8, RefineOptions::default()).unwrap();
            assert!(close(report.objective, structured.objective, 1e-7), "p={p}");
        }
    }

    #[test]
    fn small_p_identity_and_symmetric() {
        let b = [0.4, -1.0, 2.5];
        let x = solve_small_p(&DenseMatrix::identity(3), &b, 1.5, 1e-8).unwrap();
        assert!(x.iter().zip(&b).all(|(u, v)| close(*u, *v, 1e-10)));
        let a = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let x = solve_small_p(&a, &[1.0], 1.5, 1e-8).unwrap();
        assert!(close(x[0], 0.5, 1e-6) && close(x[1], 0.5, 1e-6));
        assert!(close(x[0] + x[1], 1.0, 1e-14));
    }

    // Minimizes ||(t, (1 - t)/2)||_p by golden-section search.
    fn golden_pair(p: f64) -> f64 {
        let f = |t: f64| lp_norm(&[t, (1.0 - t) / 2.0], p);
        let (mut lo, mut hi) = (-1.0, 2.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let (c, d) = (hi - r * (hi - lo), lo + r * (hi - lo));
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn small_p_matches_golden_section() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        for p in [1.1, 1.5, 1.9] {
            let eps = 1e-8;
            let run = solve_small_p_report(&a, &[1.0], p, eps, RefineOptions::default()).unwrap();
            let opt = golden_pair(p);
            assert!(lp_norm(&run.x, p) <= opt * (1.0 + 10.0 * eps), "p={p}: {} vs {opt}", lp_norm(&run.x, p));
            assert!((run.x[0] + 2.0 * run.x[1] - 1.0).abs() < 1e-12);
            // duality: ||x||_p = <y, b> / ||A^T y||_q at the optimum
            let q = dual_exponent(p);
            let aty = a.tmul_vec(&run.dual);
            assert!(close(lp_norm(&run.x, p), run.dual[0] / lp_norm(&aty, q), 1e-4));
        }
    }

    #[test]
    fn small_p_rejects_out_of_range() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(solve_small_p(&a, &[1.0], 2.0, 1e-6).is_err());
        assert_eq!(solve_small_p(&a, &[0.0], 1.5, 1e-6).unwrap(), vec![0.0, 0.0]);
    }

    // Minimizes ||N (t) - v||_p over scalar t by golden-section search.
    fn golden_scalar(col: &[f64], v: &[f64], p: f64) -> f64 {
        let f = |t: f64| lp_norm(&col.iter().zip(v).map(|(&c, &vi)| c * t - vi).collect::<Vec<_>>(), p);
        let (mut lo, mut hi) = (-10.0, 10.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let (c, d) = (hi - r * (hi - lo), lo + r * (hi - lo));
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn small_p_general_matches_scalar_oracle() {
        let col = [1.0, 2.0, -1.0, 0.5];
        let v = [0.3, 1.0, 0.2, -0.4];
        for p in [1.1, 1.5, 1.9] {
            let inst = GeneralInstance::unconstrained(DenseMatrix::new(4, 1, col.to_vec()).unwrap(), v.to_vec(), p).unwrap();
            let run = solve_small_p_general(&inst, 1e-8, RefineOptions::default()).unwrap();
            let opt = golden_scalar(&col, &v, p);
            assert!(inst.objective(&run.x) <= opt * (1.0 + 1e-7), "p={p}: {} vs {opt}", inst.objective(&run.x));
        }
        // exact fit short-circuits
        let inst = GeneralInstance::unconstrained(DenseMatrix::new(2, 1, vec![1.0f64, 2.0]).unwrap(), vec![2.0, 4.0], 1.5).unwrap();
        let run = solve_small_p_general(&inst, 1e-8, RefineOptions::default()).unwrap();
        assert!((run.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_checks() {
        let n = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(GeneralInstance::unconstrained(n.clone(), vec![1.0, 2.0], 2.0).is_err());
        assert!(GeneralInstance::new(n, vec![1.0], DenseMatrix::empty(3), vec![], 2.0).is_err());
    }
}
