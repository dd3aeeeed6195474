//! Row-major dense matrices and CSR sparse matrices used by the model and
//! the tape. Kernels are plain loops written so the compiler can vectorize
//! the inner dimension.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Same data viewed with a different shape.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(shape_err(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm_nn(self, rhs, &mut out);
        Ok(out)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `out += a · b`
pub(crate) fn gemm_nn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    let (n, k) = a.shape();
    let c = b.cols;
    debug_assert_eq!(b.rows, k);
    debug_assert_eq!(out.shape(), (n, c));
    for i in 0..n {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out.data[i * c..(i + 1) * c];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[p * c..(p + 1) * c];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · b` where `a` is `n×k` and `b` is `n×c`.
pub(crate) fn gemm_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    let (n, k) = a.shape();
    let c = b.cols;
    debug_assert_eq!(b.rows, n);
    debug_assert_eq!(out.shape(), (k, c));
    for i in 0..n {
        let a_row = &a.data[i * k..(i + 1) * k];
        let b_row = &b.data[i * c..(i + 1) * c];
        for (p, &av) in a_row.iter().enumerate() {
            let o_row = &mut out.data[p * c..(p + 1) * c];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` where `a` is `n×c` and `b` is `k×c`.
pub(crate) fn gemm_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) {
    let (n, c) = a.shape();
    let k = b.rows;
    debug_assert_eq!(b.cols, c);
    debug_assert_eq!(out.shape(), (n, k));
    for i in 0..n {
        let a_row = &a.data[i * c..(i + 1) * c];
        for p in 0..k {
            let b_row = &b.data[p * c..(p + 1) * c];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out.data[i * k + p] += acc;
        }
    }
}

/// Square sparse matrix in compressed-row form. Row `i` lists the sources
/// `j` with weight `W(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; entries are sorted by
    /// `(row, col)`. Duplicates are rejected.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(i, j, v) in &triplets {
            if i >= n || j >= n {
                return Err(shape_err(format!("entry ({i},{j}) outside {n}x{n}")));
            }
            if prev == Some((i, j)) {
                return Err(shape_err(format!("duplicate entry ({i},{j})")));
            }
            prev = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, row_ptr, col_idx, values })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, row_ptr: vec![0; n + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|&(c, _)| c == j).map_or(T::zero(), |(_, w)| w)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, j, w) in self.triplets() {
            m[(i, j)] = w;
        }
        m
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `out += W · x`
    pub(crate) fn spmm_into(&self, x: &Matrix<T>, out: &mut Matrix<T>) {
        let c = x.cols();
        for i in 0..self.n {
            let o_row = &mut out.data[i * c..(i + 1) * c];
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.values[e];
                let x_row = &x.data[self.col_idx[e] * c..(self.col_idx[e] + 1) * c];
                for (o, &xv) in o_row.iter_mut().zip(x_row) {
                    *o += w * xv;
                }
            }
        }
    }

    /// `out += Wᵀ · y`
    pub(crate) fn spmm_t_into(&self, y: &Matrix<T>, out: &mut Matrix<T>) {
        let c = y.cols();
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.values[e];
                let j = self.col_idx[e];
                for q in 0..c {
                    let v = y.data[i * c + q];
                    out.data[j * c + q] += w * v;
                }
            }
        }
    }

    pub fn spmm(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.rows() != self.n {
            return Err(shape_err(format!("sparse {}x{} times {}x{}", self.n, self.n, x.rows(), x.cols())));
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        self.spmm_into(x, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|p| a[(i, p)] * b[(p, j)]).sum())
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(4, 5, |i, j| (i as f64 - j as f64) * 0.25);
        assert_eq!(a.matmul(&b).unwrap(), naive(&a, &b));

        let mut tn = Matrix::zeros(4, 5);
        let c = Matrix::from_fn(3, 5, |i, j| (i + 2 * j) as f64);
        gemm_tn(&a, &c, &mut tn);
        assert!(tn.max_abs_diff(&naive(&a.transpose(), &c)) < 1e-12);

        let mut nt = Matrix::zeros(3, 4);
        let d = Matrix::from_fn(4, 5, |i, j| (i * j) as f64 - 1.0);
        gemm_nt(&c, &d, &mut nt);
        assert!(nt.max_abs_diff(&naive(&c, &d.transpose())) < 1e-12);
    }

    #[test]
    fn csr_rejects_duplicates_and_matches_dense() {
        assert!(CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (0, 1, 2.0)]).is_err());
        let w = CsrMatrix::from_triplets(3, vec![(2, 0, 0.5), (0, 1, 1.0), (2, 1, 0.5)]).unwrap();
        let x = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert_eq!(w.spmm(&x).unwrap(), naive(&w.to_dense(), &x));
        let mut t = Matrix::zeros(3, 2);
        w.spmm_t_into(&x, &mut t);
        assert_eq!(t, naive(&w.to_dense().transpose(), &x));
    }
}
