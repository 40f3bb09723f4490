//! Householder QR with column pivoting for the least-squares layer.
//!
//! Rows are sorted by decreasing max-norm and columns are scaled to unit
//! norm before factoring. Row sorting keeps the factorization accurate row by
//! row when row scales differ by many orders of magnitude, which is the case
//! for `D^(-1/2) A^T` with strongly varying weights.

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct PivotedQr<T> {
    m: usize,
    k: usize,
    /// Column-major `m x k`: `R` on and above the diagonal, Householder vectors below.
    qr: Vec<T>,
    tau: Vec<T>,
    /// Column `j` of `R` is input column `perm[j]`.
    perm: Vec<usize>,
    /// Factored row `i` is input row `rows[i]`.
    rows: Vec<usize>,
    /// Input column `j` was multiplied by `col_scale[j]`.
    col_scale: Vec<T>,
    rank: usize,
}

impl<T: Scalar> PivotedQr<T> {
    /// Factors the `m x k` matrix given by its columns. A pivot whose
    /// remaining column norm is at most `tol` (columns have unit norm) ends
    /// the factorization; the remaining columns count as dependent.
    pub(crate) fn from_columns(m: usize, columns: &[Vec<T>], tol: T) -> Self {
        let k = columns.len();
        let mut row_max = vec![T::zero(); m];
        for col in columns {
            for (r, &v) in row_max.iter_mut().zip(col) {
                *r = r.max(v.abs());
            }
        }
        let mut rows: Vec<usize> = (0..m).collect();
        rows.sort_by(|&a, &b| row_max[b].partial_cmp(&row_max[a]).unwrap_or(std::cmp::Ordering::Equal));
        let mut qr = vec![T::zero(); m * k];
        let mut col_scale = vec![T::zero(); k];
        for (j, col) in columns.iter().enumerate() {
            let norm = scaled_norm(col.iter().copied());
            col_scale[j] = if norm > T::zero() { T::one() / norm } else { T::zero() };
            for (i, &r) in rows.iter().enumerate() {
                qr[j * m + i] = col[r] * col_scale[j];
            }
        }
        let mut perm: Vec<usize> = (0..k).collect();
        let mut tau = vec![T::zero(); k.min(m)];
        let mut rank = 0;
        for step in 0..k.min(m) {
            // Pivot: largest remaining norm.
            let mut best = step;
            let mut best_norm = -T::one();
            for j in step..k {
                let n = scaled_norm(qr[j * m + step..(j + 1) * m].iter().copied());
                if n > best_norm {
                    best_norm = n;
                    best = j;
                }
            }
            if !(best_norm > tol) {
                break;
            }
            if best != step {
                for i in 0..m {
                    qr.swap(step * m + i, best * m + i);
                }
                perm.swap(step, best);
            }
            // Householder reflector for column `step`, rows step..m.
            let col = &mut qr[step * m + step..(step + 1) * m];
            let alpha = col[0];
            let norm = best_norm;
            let beta = if alpha >= T::zero() { -norm } else { norm };
            let v0 = alpha - beta;
            for v in col[1..].iter_mut() {
                *v /= v0;
            }
            col[0] = beta;
            tau[step] = (beta - alpha) / beta;
            let (head, tail) = qr.split_at_mut((step + 1) * m);
            let v = &head[step * m + step + 1..(step + 1) * m];
            for j in 0..k - step - 1 {
                let c = &mut tail[j * m + step..(j + 1) * m];
                let mut s = c[0];
                for (ci, &vi) in c[1..].iter().zip(v) {
                    s += *ci * vi;
                }
                s *= tau[step];
                c[0] -= s;
                for (ci, &vi) in c[1..].iter_mut().zip(v) {
                    *ci -= s * vi;
                }
            }
            rank += 1;
        }
        Self { m, k, qr, tau, perm, rows, col_scale, rank }
    }

    #[cfg(test)]
    pub(crate) fn rank(&self) -> usize {
        self.rank
    }

    fn reflect(&self, step: usize, y: &mut [T]) {
        let m = self.m;
        let v = &self.qr[step * m + step + 1..(step + 1) * m];
        let mut s = y[step];
        for (yi, &vi) in y[step + 1..].iter().zip(v) {
            s += *yi * vi;
        }
        s *= self.tau[step];
        y[step] -= s;
        for (yi, &vi) in y[step + 1..].iter_mut().zip(v) {
            *yi -= s * vi;
        }
    }

    /// `Q^T y` for `y` in input row order; the result is in factored order.
    fn qt(&self, y: &[T]) -> Vec<T> {
        let mut out: Vec<T> = self.rows.iter().map(|&r| y[r]).collect();
        for step in 0..self.rank {
            self.reflect(step, &mut out);
        }
        out
    }

    /// `Q z` for `z` in factored order; the result is in input row order.
    fn q(&self, mut z: Vec<T>) -> Vec<T> {
        for step in (0..self.rank).rev() {
            self.reflect(step, &mut z);
        }
        let mut out = vec![T::zero(); self.m];
        for (i, &r) in self.rows.iter().enumerate() {
            out[r] = z[i];
        }
        out
    }

    fn r(&self, i: usize, j: usize) -> T {
        self.qr[j * self.m + i]
    }

    /// Component of `y` orthogonal to the numerical column space.
    pub(crate) fn project_out(&self, y: &[T]) -> Vec<T> {
        let mut z = self.qt(y);
        z[..self.rank].iter_mut().for_each(|v| *v = T::zero());
        self.q(z)
    }

    /// Basic least-squares coefficients `c` minimizing `||M c - y||`;
    /// dependent columns get zero.
    pub(crate) fn coefficients(&self, y: &[T]) -> Vec<T> {
        let z = self.qt(y);
        self.back_substitute(&z[..self.rank])
    }

    /// `c` with `R11 (P^T C^-1 c)[..r] = z`, zeros on dependent columns.
    fn back_substitute(&self, z: &[T]) -> Vec<T> {
        let r = self.rank;
        let mut c = z.to_vec();
        for i in (0..r).rev() {
            let mut s = c[i];
            for j in i + 1..r {
                s -= self.r(i, j) * c[j];
            }
            c[i] = s / self.r(i, i);
        }
        let mut out = vec![T::zero(); self.k];
        for (j, &cj) in c.iter().enumerate() {
            out[self.perm[j]] = cj * self.col_scale[self.perm[j]];
        }
        out
    }

    /// Minimum-norm `u` with `M^T u = b` on the numerical rank, together with
    /// basic coefficients `phi` such that `u = M phi`.
    pub(crate) fn min_norm_transposed(&self, b: &[T]) -> (Vec<T>, Vec<T>) {
        let r = self.rank;
        // R11^T v = (P^T C b)[..r]
        let mut v: Vec<T> = (0..r).map(|j| b[self.perm[j]] * self.col_scale[self.perm[j]]).collect();
        for i in 0..r {
            let mut s = v[i];
            for j in 0..i {
                s -= self.r(j, i) * v[j];
            }
            v[i] = s / self.r(i, i);
        }
        let phi = self.back_substitute(&v);
        let mut z = vec![T::zero(); self.m];
        z[..r].copy_from_slice(&v);
        (self.q(z), phi)
    }
}

/// Euclidean norm without intermediate overflow or underflow.
fn scaled_norm<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::zero(), |m, v| m.max(v.abs()));
    if max == T::zero() || !max.is_finite() {
        return max;
    }
    let s: T = values.map(|v| (v / max) * (v / max)).sum();
    max * s.sqrt()
}
