//! Dense row-major matrices backing the autodiff tape.
//!
//! Three multiply kernels are provided (`A*B`, `A*B^T`, `A^T*B`) so the
//! backward sweep never materializes a transpose. The plain and `A*B^T`
//! kernels split over row chunks with rayon when the product is large; chunk
//! results land in disjoint output slices, so the result is identical for any
//! worker count.

use crate::scalar::Real;
use rayon::prelude::*;

/// Product size (in multiply-adds) above which the kernels go parallel.
const PAR_MIN_MADDS: usize = 1 << 21;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    /// Wraps an existing row-major buffer. Panics if the length disagrees.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length vs {rows}x{cols}");
        Self { rows, cols, data }
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

    pub fn scalar(v: T) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Scalar value of a 1x1 matrix.
    pub fn item(&self) -> T {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reinterprets the buffer with a new shape of identical length.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len(), "reshape length mismatch");
        Self {
            rows,
            cols,
            data: self.data.clone(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other`, elementwise. Panics on shape mismatch.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// `C = A * B`.
    pub fn matmul(&self, b: &Self) -> Self {
        assert_eq!(self.cols, b.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, b.cols);
        let mut out = Self::zeros(m, n);
        let kernel = |i0: usize, c_rows: &mut [T]| {
            for (di, c_row) in c_rows.chunks_mut(n).enumerate() {
                let a_row = self.row(i0 + di);
                for (kk, &a) in a_row.iter().enumerate().take(k) {
                    let b_row = b.row(kk);
                    for j in 0..n {
                        c_row[j] += a * b_row[j];
                    }
                }
            }
        };
        run_row_chunks(m, n, k, &mut out.data, kernel);
        out
    }

    /// `C = A * B^T` where `b` has shape `[n x k]`.
    pub fn matmul_nt(&self, b: &Self) -> Self {
        assert_eq!(self.cols, b.cols, "matmul_nt inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, b.rows);
        let mut out = Self::zeros(m, n);
        let kernel = |i0: usize, c_rows: &mut [T]| {
            for (di, c_row) in c_rows.chunks_mut(n).enumerate() {
                let a_row = self.row(i0 + di);
                for (j, c) in c_row.iter_mut().enumerate() {
                    let b_row = b.row(j);
                    let mut acc = T::zero();
                    for kk in 0..k {
                        acc += a_row[kk] * b_row[kk];
                    }
                    *c = acc;
                }
            }
        };
        run_row_chunks(m, n, k, &mut out.data, kernel);
        out
    }

    /// `C = A^T * B` where `self` has shape `[m x r]` and `b` has `[m x n]`.
    ///
    /// Serial: the output (a parameter-gradient-sized block) is small, and the
    /// row-streaming accumulation order must stay fixed for determinism.
    pub fn matmul_tn(&self, b: &Self) -> Self {
        assert_eq!(self.rows, b.rows, "matmul_tn inner dimension mismatch");
        let (m, r, n) = (self.rows, self.cols, b.cols);
        let mut out = Self::zeros(r, n);
        for i in 0..m {
            let a_row = self.row(i);
            let b_row = b.row(i);
            for (kk, &a) in a_row.iter().enumerate().take(r) {
                let c_row = out.row_mut(kk);
                for j in 0..n {
                    c_row[j] += a * b_row[j];
                }
            }
        }
        out
    }
}

/// Runs `kernel` over contiguous row chunks of `out`, in parallel when the
/// product is large and a multithreaded pool is active.
fn run_row_chunks<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    out: &mut [T],
    kernel: impl Fn(usize, &mut [T]) + Sync,
) {
    let madds = m.saturating_mul(n).saturating_mul(k);
    let threads = rayon::current_num_threads();
    if madds >= PAR_MIN_MADDS && threads > 1 && m >= 2 * threads {
        let chunk_rows = m.div_ceil(threads * 4).max(1);
        out.par_chunks_mut(chunk_rows * n)
            .enumerate()
            .for_each(|(ci, c_rows)| kernel(ci * chunk_rows, c_rows));
    } else {
        kernel(0, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.at(i, k) * b.at(k, j)).sum()
        })
    }

    #[test]
    fn matmul_matches_naive_reference() {
        let a = Mat::from_fn(7, 5, |i, j| (i * 5 + j) as f64 * 0.3 - 2.0);
        let b = Mat::from_fn(5, 6, |i, j| (i as f64 - j as f64) * 0.7);
        let want = naive_matmul(&a, &b);
        assert_eq!(a.matmul(&b), want);
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        let a = Mat::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).sin());
        let b = Mat::from_fn(6, 5, |i, j| ((3 * i + j) as f64).cos());
        let tn = a.matmul_tn(&b);
        let want_tn = naive_matmul(&a.transpose(), &b);
        for (x, y) in tn.as_slice().iter().zip(want_tn.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = Mat::from_fn(5, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let nt = a.matmul_nt(&c);
        let want_nt = naive_matmul(&a, &c.transpose());
        for (x, y) in nt.as_slice().iter().zip(want_nt.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let a = Mat::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = a.reshaped(3, 2);
        assert_eq!(b.at(0, 1), 2.0);
        assert_eq!(b.at(2, 0), 5.0);
    }
}
