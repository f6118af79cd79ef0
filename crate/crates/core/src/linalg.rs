//! Small dense row-major matrices and the factorizations the solvers need.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::ensure_dims;
use crate::real::{dot, sum};
use crate::{Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Mat<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols, data }
    }

    pub fn values(&self) -> Mat<f64> {
        self.map(|v| v.value())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Mat<T>) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape");
        let mut out = Vec::with_capacity(self.rows * rhs.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..rhs.cols {
                out.push(sum((0..self.cols).map(|k| row[k] * rhs[(k, j)])));
            }
        }
        Mat { rows: self.rows, cols: rhs.cols, data: out }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn tr_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.rows, x.len(), "tr_matvec shape");
        (0..self.cols).map(|j| sum((0..self.rows).map(|i| self[(i, j)] * x[i]))).collect()
    }

    pub fn add(&self, rhs: &Mat<T>) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "add shape");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Mat<T>) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "sub shape");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|&v| v * c)
    }

    pub fn abs(&self) -> Self {
        self.map(|&v| v.abs())
    }

    pub fn trace(&self) -> T {
        sum((0..self.rows.min(self.cols)).map(|i| self[(i, i)]))
    }
}

/// `a · b` for a constant `a`; zero entries of `a` are skipped.
pub fn const_matmul<T: Real>(a: &Mat<f64>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.rows, "matmul shape");
    Mat::from_fn(a.rows, b.cols, |i, j| {
        sum(a.row(i).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| b[(k, j)].scale(v)))
    })
}

/// `a · b` for a constant `b`; zero entries of `b` are skipped.
pub fn matmul_const<T: Real>(a: &Mat<T>, b: &Mat<f64>) -> Mat<T> {
    assert_eq!(a.cols, b.rows, "matmul shape");
    Mat::from_fn(a.rows, b.cols, |i, j| {
        sum((0..a.cols).filter(|&k| b[(k, j)] != 0.0).map(|k| a[(i, k)].scale(b[(k, j)])))
    })
}

/// `a · x` for a constant `a`.
pub fn const_matvec<T: Real>(a: &Mat<f64>, x: &[T]) -> Vec<T> {
    assert_eq!(a.cols, x.len(), "matvec shape");
    (0..a.rows)
        .map(|i| sum(a.row(i).iter().zip(x).filter(|(v, _)| **v != 0.0).map(|(&v, &xk)| xk.scale(v))))
        .collect()
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mat<f64> {
    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.data)
    }

    /// Maximum absolute row sum.
    pub fn norm_row_sum(&self) -> f64 {
        (0..self.rows).map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn inverse(&self) -> Option<Mat<f64>> {
        let lu = Lu::factor(self)?;
        let n = self.rows;
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Some(inv)
    }

    /// Condition number in the row-sum norm; `None` when singular.
    pub fn condition(&self) -> Option<f64> {
        let inv = self.inverse()?;
        Some(self.norm_row_sum() * inv.norm_row_sum())
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot falls below `1e-14` times the largest
    /// entry of the matrix.
    pub fn factor(a: &Mat<f64>) -> Option<Self> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = norm_inf(&lu).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (mut piv, mut best) = (k, lu[k * n + k].abs());
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if !(best > 1e-14 * scale) {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let l = lu[i * n + k] / d;
                lu[i * n + k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= l * lu[k * n + j];
                    }
                }
            }
        }
        Some(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Mat<f64>) -> Option<Self> {
        assert_eq!(a.rows, a.cols, "Cholesky needs a square matrix");
        let n = a.rows;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = libm::sqrt(d);
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Cholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// Solves `A x = b`, falling back to a Tikhonov-regularized least-squares
/// pseudo-solution when `A` is singular. The flag is `true` for the fallback.
pub fn solve_or_lstsq(a: &Mat<f64>, b: &[f64]) -> Result<(Vec<f64>, bool)> {
    ensure_dims!(a.rows == a.cols && a.rows == b.len(), "solve: {}x{} vs {}", a.rows, a.cols, b.len());
    if let Some(lu) = Lu::factor(a) {
        let mut x = lu.solve(b);
        refine(a, b, &mut x, |r| lu.solve(r));
        let res = residual(a, &x, b);
        if res.is_finite() && res <= 1e-8 * (1.0 + norm_inf(b)) {
            return Ok((x, false));
        }
    }
    let at = a.transpose();
    let mut ata = at.matmul(a);
    let eps = 1e-12 * (1.0 + ata.norm_inf());
    for i in 0..ata.rows {
        ata[(i, i)] += eps;
    }
    let rhs = at.matvec(b);
    let x = match Cholesky::factor(&ata) {
        Some(ch) => ch.solve(&rhs),
        None => vec![0.0; a.cols],
    };
    Ok((x, true))
}

fn residual(a: &Mat<f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    ax.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

/// Two steps of iterative refinement.
pub fn refine(a: &Mat<f64>, b: &[f64], x: &mut [f64], solve: impl Fn(&[f64]) -> Vec<f64>) {
    for _ in 0..2 {
        let ax = a.matvec(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_and_cholesky_agree() {
        let a = Mat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let b = [1.0, -2.0, 0.5];
        let x1 = Lu::factor(&a).unwrap().solve(&b);
        let x2 = Cholesky::factor(&a).unwrap().solve(&b);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-13);
        }
        let r = a.matvec(&x1);
        for (p, q) in r.iter().zip(&b) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_matrix_falls_back() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(Lu::factor(&a).is_none());
        assert!(Cholesky::factor(&a).is_none());
        let (x, degenerate) = solve_or_lstsq(&a, &[1.0, 2.0]).unwrap();
        assert!(degenerate);
        let r = a.matvec(&x);
        assert!((r[0] - 1.0).abs() < 1e-6 && (r[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_and_condition() {
        let a = Mat::from_rows(&[&[2.0, 0.0], &[0.0, 0.5]]);
        let inv = a.inverse().unwrap();
        assert_eq!(inv[(0, 0)], 0.5);
        assert_eq!(inv[(1, 1)], 2.0);
        assert!((a.condition().unwrap() - 4.0).abs() < 1e-14);
    }
}
