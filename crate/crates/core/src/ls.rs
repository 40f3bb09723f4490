//! Weighted least squares over affine sets, the energy function, and the
//! rank-one augmented direction solve used by the residual solver.
//!
//! Every query reduces to a symmetric positive semidefinite system
//! `G phi = rhs` with `G = R S R^T` for a fixed row matrix `R` and a diagonal
//! `S` that changes with the weights. [`SymmetricFactor`] factors such a system
//! once and answers any number of right-hand sides.

use crate::error::{Result, SolverError};
use crate::matrix::{axpy, dot, norm2, DenseMatrix, WeightVector};
use crate::qr::PivotedQr;
use crate::scalar::Scalar;

/// Minimizer of `<w, x^2>` over an affine set together with its energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySolution<T> {
    pub x: Vec<T>,
    /// `<w, x^2>` with the caller's (unfloored) weights.
    pub energy: T,
    /// Lagrange multiplier `phi` with `x = D^-1 A^T phi`.
    pub multiplier: Vec<T>,
}

/// Semidefinite `L L^T` factorization with Jacobi equilibration.
///
/// The matrix is first scaled to unit diagonal. Pivots below
/// `PIVOT_THRESHOLD` (relative to the unit diagonal) are dropped, which
/// yields a generalized inverse on the numerical range of the matrix.
#[derive(Debug, Clone)]
pub struct SymmetricFactor<T> {
    dim: usize,
    /// Lower triangle, row-major, `dim * dim`.
    lower: Vec<T>,
    scale: Vec<T>,
    active: Vec<bool>,
}

impl<T: Scalar> SymmetricFactor<T> {
    /// Factors the dense symmetric matrix `g` (row-major, `dim * dim`).
    pub fn new(dim: usize, mut g: Vec<T>) -> Result<Self> {
        assert_eq!(g.len(), dim * dim);
        let mut scale = vec![T::zero(); dim];
        let mut active = vec![true; dim];
        let mut max_diag = T::zero();
        for i in 0..dim {
            let d = g[i * dim + i];
            if !d.is_finite() {
                return Err(SolverError::SingularSystem(format!("non-finite diagonal at {i}")));
            }
            max_diag = max_diag.max(d);
        }
        if dim > 0 && max_diag <= T::zero() {
            return Err(SolverError::SingularSystem("normal matrix is zero".into()));
        }
        for i in 0..dim {
            let d = g[i * dim + i];
            if d > T::PIVOT_THRESHOLD * max_diag {
                scale[i] = T::one() / d.sqrt();
            } else {
                active[i] = false;
            }
        }
        for i in 0..dim {
            for j in 0..=i {
                g[i * dim + j] = g[i * dim + j] * scale[i] * scale[j];
            }
        }

        // Cholesky-Crout on the scaled lower triangle, in place.
        for j in 0..dim {
            let row_j: Vec<T> = g[j * dim..j * dim + j].to_vec();
            let pivot = if active[j] { g[j * dim + j] - dot(&row_j, &row_j) } else { T::zero() };
            if !pivot.is_finite() {
                return Err(SolverError::SingularSystem(format!("non-finite pivot at {j}")));
            }
            if !active[j] || pivot <= T::PIVOT_THRESHOLD {
                active[j] = false;
                for i in j..dim {
                    g[i * dim + j] = T::zero();
                }
                continue;
            }
            let ljj = pivot.sqrt();
            g[j * dim + j] = ljj;
            for i in j + 1..dim {
                let row_i = &mut g[i * dim..i * dim + j + 1];
                row_i[j] = (row_i[j] - dot(&row_i[..j], &row_j)) / ljj;
            }
        }
        Ok(Self { dim, lower: g, scale, active })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of pivots treated as rank deficiency.
    pub fn deficiency(&self) -> usize {
        self.active.iter().filter(|a| !**a).count()
    }

    /// Solves `G phi = rhs` on the numerical range of `G`.
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.dim;
        assert_eq!(rhs.len(), n);
        let mut y: Vec<T> = rhs.iter().zip(&self.scale).map(|(&b, &s)| b * s).collect();
        for i in 0..n {
            if !self.active[i] {
                y[i] = T::zero();
                continue;
            }
            let row = &self.lower[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            if !self.active[i] {
                y[i] = T::zero();
                continue;
            }
            y[i] /= self.lower[i * n + i];
            let yi = y[i];
            if yi != T::zero() {
                let row = &self.lower[i * n..i * n + i];
                axpy(-yi, row, &mut y[..i]);
            }
        }
        y.iter().zip(&self.scale).map(|(&v, &s)| v * s).collect()
    }
}

/// `G = R diag(s) R^T` for the rows of `R`, as a dense symmetric matrix.
pub(crate) fn weighted_gram<T: Scalar>(rows: &DenseMatrix<T>, s: &[T]) -> Vec<T> {
    let d = rows.rows();
    let mut g = vec![T::zero(); d * d];
    let scaled: Vec<Vec<T>> = (0..d)
        .map(|i| rows.row(i).iter().zip(s).map(|(&a, &w)| a * w).collect())
        .collect();
    for i in 0..d {
        for j in 0..=i {
            let v = dot(&scaled[i], rows.row(j));
            g[i * d + j] = v;
            g[j * d + i] = v;
        }
    }
    g
}

pub(crate) fn feasibility_tolerance<T: Scalar>(rhs: &[T]) -> T {
    T::FEASIBILITY_TOL * (T::one() + norm2(rhs))
}

pub(crate) fn weighted_energy<T: Scalar>(w: &[T], x: &[T]) -> T {
    w.iter().zip(x).map(|(&wi, &xi)| wi * xi * xi).sum()
}

/// Factorization-bearing handle for `min_{Ax=b} <w, x^2>` with changing weights.
///
/// With `u = D^(1/2) x` the problem is the minimum-norm solution of
/// `(D^(-1/2) A^T)^T u = b`, solved through a pivoted QR factorization of
/// `D^(-1/2) A^T`. Coordinates with `w_i < WEIGHT_FLOOR * max(w)` are treated
/// as unweighted and eliminated exactly. The factorization is cached for the
/// most recent weight vector, so a direction query after a point query at the
/// same weights reuses it.
#[derive(Debug, Clone)]
pub struct WeightedLsSolver<T> {
    a: DenseMatrix<T>,
    b: Vec<T>,
    weights: Vec<T>,
    factor: Option<WeightedFactor<T>>,
    solves: usize,
}

/// Factorization for one weight vector.
#[derive(Debug, Clone)]
struct WeightedFactor<T> {
    /// `1 / sqrt(w_i)` on kept coordinates, zero on free ones.
    scale: Vec<T>,
    kept: Vec<usize>,
    free: Vec<usize>,
    /// QR of the free columns of `A`, when there are free coordinates.
    free_qr: Option<PivotedQr<T>>,
    /// QR of `(P A_W D_W^(-1/2))^T`, with `P` projecting out `range(A_F)`.
    kept_qr: Option<PivotedQr<T>>,
}

impl<T: Scalar> WeightedFactor<T> {
    fn new(a: &DenseMatrix<T>, w: &[T]) -> Self {
        let (d, n) = (a.rows(), a.cols());
        let free = free_coordinates(w);
        let mut is_free = vec![false; n];
        free.iter().for_each(|&i| is_free[i] = true);
        let kept: Vec<usize> = (0..n).filter(|&i| !is_free[i]).collect();
        let mut scale = vec![T::zero(); n];
        for &i in &kept {
            scale[i] = T::one() / w[i].sqrt();
        }
        let column = |j: usize| -> Vec<T> { (0..d).map(|r| a.get(r, j)).collect() };
        let free_qr = if free.is_empty() || d == 0 {
            None
        } else {
            let cols: Vec<Vec<T>> = free.iter().map(|&j| column(j)).collect();
            Some(PivotedQr::from_columns(d, &cols, T::PIVOT_THRESHOLD))
        };
        let kept_qr = if kept.is_empty() || d == 0 {
            None
        } else {
            // Row i of the factored matrix is the projected, scaled column kept[i] of A.
            let rows: Vec<Vec<T>> = kept
                .iter()
                .map(|&j| {
                    let c: Vec<T> = column(j).into_iter().map(|v| v * scale[j]).collect();
                    match &free_qr {
                        Some(f) => f.project_out(&c),
                        None => c,
                    }
                })
                .collect();
            let cols: Vec<Vec<T>> = (0..d).map(|r| rows.iter().map(|row| row[r]).collect()).collect();
            Some(PivotedQr::from_columns(kept.len(), &cols, T::PIVOT_THRESHOLD))
        };
        Self { scale, kept, free, free_qr, kept_qr }
    }

    fn project(&self, y: &[T]) -> Vec<T> {
        match &self.free_qr {
            Some(f) => f.project_out(y),
            None => y.to_vec(),
        }
    }

    /// Minimizer of `<w, x^2>` over `Ax = rhs` (not checked for feasibility) and its multiplier.
    fn solve(&self, a: &DenseMatrix<T>, rhs: &[T]) -> (Vec<T>, Vec<T>) {
        let n = a.cols();
        let mut x = vec![T::zero(); n];
        let mut phi = vec![T::zero(); rhs.len()];
        if let Some(qr) = &self.kept_qr {
            let (u, mult) = qr.min_norm_transposed(&self.project(rhs));
            for (idx, &j) in self.kept.iter().enumerate() {
                x[j] = u[idx] * self.scale[j];
            }
            phi = mult;
        }
        if let Some(f) = &self.free_qr {
            let ax = a.mul_vec(&x);
            let rem: Vec<T> = rhs.iter().zip(&ax).map(|(&r, &v)| r - v).collect();
            let xf = f.coefficients(&rem);
            for (idx, &j) in self.free.iter().enumerate() {
                x[j] = xf[idx];
            }
        }
        (x, phi)
    }
}

impl<T: Scalar> WeightedLsSolver<T> {
    pub fn new(a: DenseMatrix<T>, b: Vec<T>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(SolverError::DimensionMismatch(format!(
                "b has length {}, A has {} rows",
                b.len(),
                a.rows()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput("demand vector has non-finite entries".into()));
        }
        Ok(Self { a, b, weights: Vec::new(), factor: None, solves: 0 })
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.a
    }

    pub fn demand(&self) -> &[T] {
        &self.b
    }

    /// Linear-system solves performed so far.
    pub fn linear_solves(&self) -> usize {
        self.solves
    }

    fn prepare(&mut self, w: &[T]) -> Result<()> {
        if w.len() != self.a.cols() {
            return Err(SolverError::DimensionMismatch(format!(
                "weights have length {}, A has {} columns",
                w.len(),
                self.a.cols()
            )));
        }
        if self.factor.is_some() && self.weights == w {
            return Ok(());
        }
        WeightVector::new(w.to_vec())?;
        if self.a.rows() > 0 && self.a.as_slice().iter().all(|&v| v == T::zero()) {
            return Err(SolverError::SingularSystem("constraint matrix is zero".into()));
        }
        self.factor = Some(WeightedFactor::new(&self.a, w));
        self.weights = w.to_vec();
        Ok(())
    }

    /// Minimizer of `<w, x^2>` subject to `Ax = b`.
    ///
    /// Coordinates with `w_i < WEIGHT_FLOOR * max(w)` are treated as
    /// unweighted: they are eliminated exactly, which is the limit of any
    /// vanishing weight.
    pub fn solve(&mut self, w: &[T]) -> Result<EnergySolution<T>> {
        self.prepare(w)?;
        let factor = self.factor.as_ref().expect("prepared");
        let (x, phi) = factor.solve(&self.a, &self.b);
        self.solves += 1;
        let residual: Vec<T> = self.a.mul_vec(&x).iter().zip(&self.b).map(|(&ax, &bi)| ax - bi).collect();
        let res = norm2(&residual);
        let tol = feasibility_tolerance(&self.b);
        if !(res <= tol) {
            return Err(SolverError::InfeasibleDemand { residual: res.to_f64_lossy(), tolerance: tol.to_f64_lossy() });
        }
        let energy = weighted_energy(&self.weights, &x);
        Ok(EnergySolution { x, energy, multiplier: phi })
    }

    /// Minimizer of `<w, d^2>` subject to `A d = 0` and `<g, d> = target`.
    ///
    /// Uses only the factorization for `A`: with `g~ = D^(-1/2) g` and `h` its
    /// component orthogonal to the range of `D^(-1/2) A^T`, the minimizer is
    /// `d = target D^(-1/2) h / |h|^2`. The returned multiplier has length
    /// `rows + 1`: the multipliers of `A` followed by that of the `g` row.
    pub fn solve_direction(&mut self, w: &[T], g: &[T], target: T) -> Result<EnergySolution<T>> {
        let n = self.a.cols();
        if g.len() != n {
            return Err(SolverError::DimensionMismatch(format!("g has length {}, expected {n}", g.len())));
        }
        self.prepare(w)?;
        if target == T::zero() {
            return Ok(EnergySolution {
                x: vec![T::zero(); n],
                energy: T::zero(),
                multiplier: vec![T::zero(); self.a.rows() + 1],
            });
        }
        self.solves += 1;
        let factor = self.factor.as_ref().expect("prepared");
        if !factor.free.is_empty() {
            // Unit target, scaled afterwards, so the checks do not depend on |target|.
            let aug = self.a.with_row(g)?;
            let mut rhs = vec![T::zero(); self.a.rows()];
            rhs.push(T::one());
            let (x, multiplier) = WeightedFactor::new(&aug, w).solve(&aug, &rhs);
            let miss = norm2(&aug.mul_vec(&x).iter().zip(&rhs).map(|(&u, &v)| u - v).collect::<Vec<T>>());
            let unit_energy = weighted_energy(w, &x);
            let gg: T = factor.kept.iter().map(|&i| g[i] * g[i] / w[i]).sum();
            if !(miss <= T::FEASIBILITY_TOL) || !(unit_energy * gg * T::PIVOT_THRESHOLD < T::one()) {
                return Err(SolverError::DegenerateDirection);
            }
            let x: Vec<T> = x.into_iter().map(|v| v * target).collect();
            let multiplier = multiplier.into_iter().map(|v| v * target).collect();
            return Ok(EnergySolution { x, energy: unit_energy * target * target, multiplier });
        }
        let gs: Vec<T> = g.iter().zip(&factor.scale).map(|(&gi, &s)| gi * s).collect();
        let (h, phi) = match &factor.kept_qr {
            Some(qr) => {
                // Two passes keep h orthogonal when most of g~ lies in the range.
                let h1 = qr.project_out(&gs);
                let h = qr.project_out(&h1);
                let inside: Vec<T> = gs.iter().zip(&h).map(|(&u, &v)| u - v).collect();
                (h, qr.coefficients(&inside))
            }
            None => (gs.clone(), vec![T::zero(); self.a.rows()]),
        };
        let hh = dot(&h, &h);
        let gg = dot(&gs, &gs);
        if !(gg > T::zero()) || !(hh > T::PIVOT_THRESHOLD * gg) {
            return Err(SolverError::DegenerateDirection);
        }
        let lambda = target / hh;
        let x: Vec<T> = h.iter().zip(&factor.scale).map(|(&v, &s)| v * s * lambda).collect();
        let res = norm2(&self.a.mul_vec(&x));
        let tol = T::FEASIBILITY_TOL * (T::one() + target.abs()) * (T::one() + norm2(&x));
        if !(res <= tol) {
            return Err(SolverError::InfeasibleDemand { residual: res.to_f64_lossy(), tolerance: tol.to_f64_lossy() });
        }
        let energy = weighted_energy(&self.weights, &x);
        let mut multiplier: Vec<T> = phi.iter().map(|&p| -lambda * p).collect();
        multiplier.push(lambda);
        Ok(EnergySolution { x, energy, multiplier })
    }
}

/// Coordinates whose weight is below `WEIGHT_FLOOR * max(w)`; empty when all weights vanish.
fn free_coordinates<T: Scalar>(w: &[T]) -> Vec<usize> {
    let max = w.iter().copied().fold(T::zero(), T::max);
    if max <= T::zero() {
        return Vec::new();
    }
    let floor = T::WEIGHT_FLOOR * max;
    (0..w.len()).filter(|&i| w[i] < floor).collect()
}

/// `argmin_{Ax=b} <w, x^2>` via `x = D^-1 A^T (A D^-1 A^T)^+ b`.
pub fn solve_weighted_ls<T: Scalar>(a: &DenseMatrix<T>, b: &[T], w: &WeightVector<T>) -> Result<EnergySolution<T>> {
    WeightedLsSolver::new(a.clone(), b.to_vec())?.solve(w.as_slice())
}

/// `E(w) = min_{Ax=b} <w, x^2>`.
pub fn energy<T: Scalar>(a: &DenseMatrix<T>, b: &[T], w: &WeightVector<T>) -> Result<T> {
    Ok(solve_weighted_ls(a, b, w)?.energy)
}

/// `argmin <w, d^2>` subject to `A d = 0`, `<g, d> = target`, without forming `[A; g^T]`.
pub fn solve_augmented_ls<T: Scalar>(
    a: &DenseMatrix<T>,
    g: &[T],
    target: T,
    w: &WeightVector<T>,
) -> Result<EnergySolution<T>> {
    WeightedLsSolver::new(a.clone(), vec![T::zero(); a.rows()])?.solve_direction(w.as_slice(), g, target)
}

/// `sum_i w_i x_i^2 (1 - w_i / w'_i)`, a lower bound on `E(w') - E(w)` when
/// `w' >= w` and `x` minimizes `<w, x^2>`.
pub fn energy_increase_lower_bound<T: Scalar>(x: &[T], w_old: &[T], w_new: &[T]) -> Result<T> {
    if x.len() != w_old.len() || x.len() != w_new.len() {
        return Err(SolverError::DimensionMismatch("x, w_old and w_new must have equal length".into()));
    }
    let mut sum = T::zero();
    for i in 0..x.len() {
        let (wo, wn) = (w_old[i], w_new[i]);
        if !(wo > T::zero()) || !(wn >= wo) {
            return Err(SolverError::InvalidInput(format!(
                "need w_new >= w_old > 0 at coordinate {i} (w_old = {wo}, w_new = {wn})"
            )));
        }
        sum += wo * x[i] * x[i] * (T::one() - wo / wn);
    }
    Ok(sum)
}

/// A feasible point of an affine set described by a weighted least-squares backend.
///
/// `y` lives in the weighted (objective) coordinates. `params` carries any
/// additional decision variables the backend eliminates, e.g. `x` in the
/// general form `y = Nx - v`; it is empty when `y` is the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePoint<T> {
    pub y: Vec<T>,
    pub params: Vec<T>,
}

impl<T: Scalar> FeasiblePoint<T> {
    /// `self - step * dir` in both coordinate blocks.
    pub fn stepped(&self, dir: &FeasiblePoint<T>, step: T) -> Self {
        let sub = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&u, &v)| u - step * v).collect::<Vec<T>>();
        Self { y: sub(&self.y, &dir.y), params: sub(&self.params, &dir.params) }
    }
}

/// Weighted least-squares queries over a fixed affine set `{y : y feasible}`.
///
/// The solvers only interact with the constraint set through this trait, so
/// the same code runs on `min ||x||_p s.t. Ax=b` and on the structured general
/// form `min ||Nx - v||_p s.t. Ax=b`.
pub trait LeastSquaresOracle<T: Scalar> {
    /// Number of weighted coordinates.
    fn dim(&self) -> usize;

    /// `argmin <w, y^2>` over the feasible set.
    fn solve_point(&mut self, w: &[T]) -> Result<FeasiblePoint<T>>;

    /// `argmin <w, d^2>` over directions `d` of the feasible set with `<g, d> = target`.
    fn solve_direction(&mut self, w: &[T], g: &[T], target: T) -> Result<FeasiblePoint<T>>;

    /// Linear-system solves performed so far.
    fn linear_solves(&self) -> usize;

    /// `E(w)`.
    fn energy(&mut self, w: &[T]) -> Result<T> {
        let y = self.solve_point(w)?.y;
        Ok(weighted_energy(w, &y))
    }
}

impl<T: Scalar> LeastSquaresOracle<T> for WeightedLsSolver<T> {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn solve_point(&mut self, w: &[T]) -> Result<FeasiblePoint<T>> {
        Ok(FeasiblePoint { y: self.solve(w)?.x, params: Vec::new() })
    }

    fn solve_direction(&mut self, w: &[T], g: &[T], target: T) -> Result<FeasiblePoint<T>> {
        Ok(FeasiblePoint { y: WeightedLsSolver::solve_direction(self, w, g, target)?.x, params: Vec::new() })
    }

    fn linear_solves(&self) -> usize {
        self.solves
    }
}
