//! Small dense matrices.
//!
//! Every matrix in this crate is tiny (block sizes of a few states), so a
//! row-major `Vec` with straightforward loops is all that is needed. The
//! factorizations are generic over [`Real`]; [`gauss_jordan_inverse`] only
//! needs field arithmetic and therefore also runs on exact rationals.

use std::ops::{Index, IndexMut};

use num_traits::{Num, Zero};

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone + Zero> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.iter().flat_map(|row| row.iter().cloned()).collect() }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn column(v: &[T]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    /// Copies the `nr x nc` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)].clone())
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Mat<T>) {
        for i in 0..src.rows {
            for j in 0..src.cols {
                self[(r0 + i, c0 + j)] = src[(i, j)].clone();
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }
}

impl<T> Mat<T> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline(always)]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline(always)]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Num + Clone> Mat<T> {
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn matmul(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Mat::<T>::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)].clone();
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out[(i, j)].clone() + a.clone() * rhs[(k, j)].clone();
                    out[(i, j)] = v;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone()))
            .collect()
    }

    pub fn add(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.shape(), rhs.shape());
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)].clone() + rhs[(i, j)].clone())
    }

    pub fn sub(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.shape(), rhs.shape());
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)].clone() - rhs[(i, j)].clone())
    }

    pub fn scale(&self, s: T) -> Mat<T> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)].clone() * s.clone())
    }
}

impl<T: Real> Mat<T> {
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute entry of `self - rhs` divided by `max(1, |rhs|_max)`.
    pub fn rel_diff(&self, rhs: &Mat<T>) -> T {
        assert_eq!(self.shape(), rhs.shape());
        let scale = rhs.max_abs().max(T::one());
        self.sub(rhs).max_abs() / scale
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&mut self) {
        let half = lit::<T>(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn cholesky(&self) -> Option<Cholesky<T>> {
        Cholesky::new(self)
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        symmetric_eigen(self).0
    }

    /// Singular values, descending.
    pub fn singular_values(&self) -> Vec<T> {
        singular_values(self)
    }
}

/// Lower-triangular factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Mat<T>) -> Option<Self> {
        assert_eq!(a.rows, a.cols, "cholesky of non-square matrix");
        let mut l = a.clone();
        if !cholesky_in_place(l.as_mut_slice(), a.rows) {
            return None;
        }
        Some(Self { l })
    }

    pub fn l(&self) -> &Mat<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Smallest squared pivot `L_ii^2`.
    pub fn min_pivot(&self) -> T {
        (0..self.l.rows).map(|i| self.l[(i, i)] * self.l[(i, i)]).fold(T::infinity(), T::min)
    }

    pub fn log_det(&self) -> T {
        lit::<T>(2.0) * (0..self.l.rows).map(|i| self.l[(i, i)].ln()).sum::<T>()
    }

    pub fn det(&self) -> T {
        let p: T = (0..self.l.rows).fold(T::one(), |acc, i| acc * self.l[(i, i)]);
        p * p
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        chol_solve_in_place(self.l.as_slice(), self.l.rows, &mut x);
        x
    }

    /// `b^T A^{-1} b`.
    pub fn quad_form(&self, b: &[T]) -> T {
        let mut y = b.to_vec();
        forward_subst_in_place(self.l.as_slice(), self.l.rows, &mut y);
        y.iter().map(|v| *v * *v).sum()
    }

    pub fn solve_mat(&self, b: &Mat<T>) -> Mat<T> {
        assert_eq!(b.rows, self.l.rows);
        let mut out = Mat::zeros(b.rows, b.cols);
        let mut col = vec![T::zero(); b.rows];
        for j in 0..b.cols {
            for i in 0..b.rows {
                col[i] = b[(i, j)];
            }
            chol_solve_in_place(self.l.as_slice(), self.l.rows, &mut col);
            for i in 0..b.rows {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat<T> {
        let mut inv = self.solve_mat(&Mat::identity(self.l.rows));
        inv.symmetrize();
        inv
    }
}

/// In-place Cholesky of the row-major `n x n` matrix `a`; the strict upper
/// triangle is zeroed. Returns `false` when a pivot is not strictly positive.
pub fn cholesky_in_place<T: Real>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let djj = d.sqrt();
        a[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / djj;
        }
        for k in (j + 1)..n {
            a[j * n + k] = T::zero();
        }
    }
    true
}

/// Solves `L y = b` in place.
pub fn forward_subst_in_place<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L L^T x = b` in place.
pub fn chol_solve_in_place<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    forward_subst_in_place(l, n, b);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues in ascending order and the matching eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: &Mat<T>) -> (Vec<T>, Mat<T>) {
    let n = a.rows;
    assert_eq!(n, a.cols, "eigen of non-square matrix");
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Mat::<T>::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        let scale: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum::<T>() + off;
        if off <= eps * eps * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (lit::<T>(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// One-sided Jacobi SVD; only the singular values are kept.
pub fn singular_values<T: Real>(a: &Mat<T>) -> Vec<T> {
    // Work on the orientation with more rows than columns.
    let mut u = if a.rows >= a.cols { a.clone() } else { a.transpose() };
    let (m, n) = u.shape();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for k in 0..m {
                    alpha += u[(k, p)] * u[(k, p)];
                    beta += u[(k, q)] * u[(k, q)];
                    gamma += u[(k, p)] * u[(k, q)];
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (lit::<T>(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let ukp = u[(k, p)];
                    let ukq = u[(k, q)];
                    u[(k, p)] = c * ukp - s * ukq;
                    u[(k, q)] = s * ukp + c * ukq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = (0..n).map(|j| (0..m).map(|k| u[(k, j)] * u[(k, j)]).sum::<T>().sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Numerical rank: number of singular values at or above `tol * s_max`.
pub fn numerical_rank<T: Real>(a: &Mat<T>, tol: T) -> usize {
    let sv = singular_values(a);
    let smax = sv.first().copied().unwrap_or(T::zero());
    if smax == T::zero() {
        return 0;
    }
    sv.iter().filter(|s| **s >= tol * smax).count()
}

/// Pseudo-inverse of a symmetric PSD matrix, dropping eigenvalues below
/// `rel_tol * lambda_max`.
pub fn symmetric_pinv<T: Real>(a: &Mat<T>, rel_tol: T) -> Mat<T> {
    let (vals, vecs) = symmetric_eigen(a);
    let n = a.rows;
    let lmax = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let mut out = Mat::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= rel_tol * lmax || lam <= T::zero() {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += vecs[(i, k)] * vecs[(j, k)] / lam;
            }
        }
    }
    out
}

/// Gauss-Jordan inverse using only field operations. Pivots on the first
/// non-zero entry, which is exact for rational scalars. Returns `None` for
/// a singular input.
pub fn gauss_jordan_inverse<F: Num + Clone>(a: &Mat<F>) -> Option<Mat<F>> {
    let n = a.rows;
    assert_eq!(n, a.cols, "inverse of non-square matrix");
    let mut m = a.clone();
    let mut inv = Mat::<F>::identity(n);
    for col in 0..n {
        let pivot_row = (col..n).find(|&r| !m[(r, col)].is_zero())?;
        if pivot_row != col {
            for j in 0..n {
                let t = m[(col, j)].clone();
                m[(col, j)] = m[(pivot_row, j)].clone();
                m[(pivot_row, j)] = t;
                let t = inv[(col, j)].clone();
                inv[(col, j)] = inv[(pivot_row, j)].clone();
                inv[(pivot_row, j)] = t;
            }
        }
        let p = m[(col, col)].clone();
        for j in 0..n {
            m[(col, j)] = m[(col, j)].clone() / p.clone();
            inv[(col, j)] = inv[(col, j)].clone() / p.clone();
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[(r, col)].clone();
            if f.is_zero() {
                continue;
            }
            for j in 0..n {
                m[(r, j)] = m[(r, j)].clone() - f.clone() * m[(col, j)].clone();
                inv[(r, j)] = inv[(r, j)].clone() - f.clone() * inv[(col, j)].clone();
            }
        }
    }
    Some(inv)
}
