//! Dense row-major `f64` matrices and the handful of kernels the trainers need.
//!
//! Products go through `matrixmultiply`'s blocked GEMM. Symmetric positive
//! definite systems are solved with a Cholesky factorization implemented here.

use std::fmt;

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. Panics on ragged input; meant for
    /// literals in tests and examples.
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

    /// A `1 x n` row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the rows listed in `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copies the contiguous row range `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                out.data[c * self.rows + r] = v;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape("zip_map", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        self.map(|v| alpha * v)
    }

    /// `self += alpha * x`.
    pub fn add_scaled_inplace(&mut self, alpha: f64, x: &Matrix) -> Result<()> {
        self.same_shape("add_scaled_inplace", x)?;
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y += alpha * xv;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum over rows, as a `1 x cols` row vector.
    pub fn column_sums(&self) -> Matrix {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Matrix::row_vector(&out)
    }

    /// `[self | 1]`: appends a column of ones.
    pub fn append_ones_column(&self) -> Matrix {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.push(1.0);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Stacks `top` over `bottom` (equal column counts).
    pub fn vstack(top: &Matrix, bottom: &Matrix) -> Result<Matrix> {
        if top.cols != bottom.cols {
            return Err(Error::ShapeMismatch {
                op: "vstack",
                left: top.shape(),
                right: bottom.shape(),
            });
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            1.0,
            self.view(false),
            other.view(false),
            0.0,
            &mut out,
        );
        Ok(out)
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(1.0, self.view(true), other.view(false), 0.0, &mut out);
        Ok(out)
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(1.0, self.view(false), other.view(true), 0.0, &mut out);
        Ok(out)
    }

    /// `self * w + e b`, the affine map of one layer.
    pub fn affine(&self, w: &Matrix, b: &Matrix) -> Result<Matrix> {
        row_broadcast_add(&self.matmul(w)?, b)
    }

    fn same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn view(&self, transposed: bool) -> View<'_> {
        if transposed {
            View {
                rows: self.cols,
                cols: self.rows,
                row_stride: 1,
                col_stride: self.cols as isize,
                data: &self.data,
            }
        } else {
            View {
                rows: self.rows,
                cols: self.cols,
                row_stride: self.cols as isize,
                col_stride: 1,
                data: &self.data,
            }
        }
    }
}

struct View<'a> {
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
    data: &'a [f64],
}

/// `out = alpha * a * b + beta * out`; shapes are checked by the callers.
fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.shape(), (a.rows, b.cols));
    if out.data.is_empty() {
        return;
    }
    if a.cols == 0 {
        out.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the views describe in-bounds strided layouts of their backing
    // slices and `out` is a distinct, exclusively borrowed buffer of the
    // declared shape.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// `alpha * x + y`.
pub fn axpy(alpha: f64, x: &Matrix, y: &Matrix) -> Result<Matrix> {
    x.zip_map(y, |a, b| alpha * a + b)
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

/// Frobenius inner product `⟨A, B⟩ = Σ a_ij b_ij`.
pub fn frob_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.same_shape("frob_inner", b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

pub fn frob_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Elementwise `min(max(a, lo), hi)`. `hi` may be `+inf`.
pub fn clamp(a: &Matrix, lo: f64, hi: f64) -> Matrix {
    a.map(|v| v.max(lo).min(hi))
}

/// Adds the `1 x n` row `b` to every row of `a`, i.e. `A + e b`.
pub fn row_broadcast_add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows != 1 || b.cols != a.cols {
        return Err(Error::ShapeMismatch {
            op: "row_broadcast_add",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = a.clone();
    for r in 0..out.rows {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    // Row-major lower triangle, upper part zero.
    l: Vec<f64>,
}

/// Relative asymmetry accepted by [`Cholesky::factor`].
pub const SYMMETRY_TOL: f64 = 1e-10;

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::ShapeMismatch {
                op: "cholesky",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let n = a.rows;
        for i in 0..n {
            for j in 0..i {
                let (x, y) = (a.get(i, j), a.get(j, i));
                let diff = (x - y).abs();
                if diff > SYMMETRY_TOL * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        diff,
                    });
                }
            }
        }

        // Pivots this small relative to the diagonal are rounding noise of a
        // singular matrix.
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        let floor = max_diag * n as f64 * f64::EPSILON;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (li, lj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let dot: f64 = li.iter().zip(lj).map(|(p, q)| p * q).sum();
                let s = a.get(i, j) - dot;
                if i == j {
                    if !(s.is_finite() && s > floor) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.n;
        if b.rows != n {
            return Err(Error::ShapeMismatch {
                op: "cholesky_solve",
                left: (n, n),
                right: b.shape(),
            });
        }
        let k = b.cols;
        let mut x = b.clone();
        // L Y = B, one row of Y at a time.
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * k);
            let row = &mut rest[..k];
            for j in 0..i {
                let lij = self.l[i * n + j];
                if lij != 0.0 {
                    for (r, &y) in row.iter_mut().zip(&done[j * k..(j + 1) * k]) {
                        *r -= lij * y;
                    }
                }
            }
            let inv = 1.0 / self.l[i * n + i];
            row.iter_mut().for_each(|v| *v *= inv);
        }
        // Lᵀ X = Y, bottom-up.
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * k);
            let row = &mut head[i * k..];
            for j in i + 1..n {
                let lji = self.l[j * n + i];
                if lji != 0.0 {
                    let xj = &tail[(j - i - 1) * k..(j - i) * k];
                    for (r, &v) in row.iter_mut().zip(xj) {
                        *r -= lji * v;
                    }
                }
            }
            let inv = 1.0 / self.l[i * n + i];
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.n))
            .expect("identity has matching shape")
    }

    /// Solves `X A = B` for `X` (`A` symmetric, so `X = B A⁻¹`).
    pub fn solve_right(&self, b: &Matrix) -> Result<Matrix> {
        if b.cols != self.n {
            return Err(Error::ShapeMismatch {
                op: "cholesky_solve_right",
                left: b.shape(),
                right: (self.n, self.n),
            });
        }
        b.matmul(&self.inverse())
    }
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "spd_solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Cholesky::factor(a)?.solve(b)
}
