use crate::par;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Rows per partial-sum block in reductions over the row axis. Fixed so that
/// the summation order does not depend on the thread count.
const REDUCE_BLOCK: usize = 512;

/// Output rows per product task.
const ROW_BLOCK: usize = 256;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {rows}x{cols}",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(idx.len(), self.cols, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (k, n) = (self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, n);
        if k == 0 || n == 0 {
            return out;
        }
        par::for_each_row(&mut out.data, ROW_BLOCK * n, |b, block| {
            let rows = block.len() / n;
            let a = &self.data[b * ROW_BLOCK * k..];
            // SAFETY: `a` holds `rows × k` row-major values, `other` is
            // `k × n` row-major and `block` is `rows × n`.
            unsafe {
                gemm(rows, k, n, a.as_ptr(), k as isize, 1, other.data.as_ptr(), n as isize, 1, block);
            }
        });
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt shape mismatch {:?} x {:?}ᵀ",
            self.shape(),
            other.shape()
        );
        let (k, n) = (self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, n);
        if k == 0 || n == 0 {
            return out;
        }
        par::for_each_row(&mut out.data, ROW_BLOCK * n, |b, block| {
            let rows = block.len() / n;
            let a = &self.data[b * ROW_BLOCK * k..];
            // SAFETY: `other` is `n × k` row-major, read as its `k × n`
            // transpose through swapped strides.
            unsafe {
                gemm(rows, k, n, a.as_ptr(), k as isize, 1, other.data.as_ptr(), 1, k as isize, block);
            }
        });
        out
    }

    /// `selfᵀ · other`, reduced over the shared row axis in fixed blocks.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn shape mismatch {:?}ᵀ x {:?}",
            self.shape(),
            other.shape()
        );
        let (k, n) = (self.cols, other.cols);
        if k == 0 || n == 0 || self.rows == 0 {
            return Matrix::zeros(k, n);
        }
        let blocks = self.rows.div_ceil(REDUCE_BLOCK);
        let partials = par::map_indices(blocks, |b| {
            let start = b * REDUCE_BLOCK;
            let rows = (self.rows - start).min(REDUCE_BLOCK);
            let mut acc = vec![0.0; k * n];
            // SAFETY: the block of `self` is `rows × k` row-major, read as its
            // `k × rows` transpose; the block of `other` is `rows × n`.
            unsafe {
                gemm(
                    k,
                    rows,
                    n,
                    self.data[start * k..].as_ptr(),
                    1,
                    k as isize,
                    other.data[start * n..].as_ptr(),
                    n as isize,
                    1,
                    &mut acc,
                );
            }
            acc
        });
        let mut data = vec![0.0; k * n];
        for part in partials {
            for (d, p) in data.iter_mut().zip(part) {
                *d += p;
            }
        }
        Matrix::from_vec(k, n, data)
    }
}

/// `out = A · B` for an `m × k` matrix `A` and a `k × n` matrix `B` given by
/// pointers and strides; `out` is `m × n` row-major.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: *const f64,
    rsa: isize,
    csa: isize,
    b: *const f64,
    rsb: isize,
    csb: isize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), m * n);
    matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, out.as_mut_ptr(), n as isize, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn arange(r: usize, c: usize, scale: f64) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|x| (x as f64 * scale).sin()).collect())
    }

    #[test]
    fn products_agree_with_naive() {
        let a = arange(37, 9, 0.7);
        let b = arange(9, 13, 1.3);
        let c = naive(&a, &b);
        let close = |x: &Matrix, y: &Matrix| {
            x.data().iter().zip(y.data()).all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&a.matmul(&b), &c));
        assert!(close(&a.matmul_nt(&b.transpose()), &c));
        assert!(close(&a.transpose().matmul_tn(&b), &c));
        let tall = arange(1500, 5, 0.11);
        let g = arange(1500, 3, 0.23);
        assert!(close(&tall.matmul_tn(&g), &naive(&tall.transpose(), &g)));
    }
}
