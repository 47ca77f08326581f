//! Dense real matrices and the small set of numeric kernels the rest of the
//! crate is built on: products and powers, general and symmetric
//! eigendecomposition, singular values, rank, and inversion.
//!
//! Matrices are row-major `Vec<f64>` with validated construction: dimensions
//! must be positive, the entry count must match, and every entry must be
//! finite. All downstream code relies on those invariants.

mod eigen;
mod lu;
mod sym;
mod svd;

pub use eigen::{EigenCluster, EigenReport};
pub use sym::SymmetricEigen;

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A complex number with just enough surface for eigenvalue reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexScalar {
    pub re: f64,
    pub im: f64,
}

impl ComplexScalar {
    pub fn new(re: f64, im: f64) -> Self {
        ComplexScalar { re, im }
    }

    pub fn real(re: f64) -> Self {
        ComplexScalar { re, im: 0.0 }
    }

    /// |z|, computed without intermediate overflow.
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }

    /// Distance to another complex value.
    pub fn dist(&self, other: &ComplexScalar) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }

    /// True when the imaginary part is negligible at the given tolerance.
    pub fn is_real(&self, tol: f64) -> bool {
        self.im.abs() <= tol
    }

    /// Total order used for reporting: descending modulus, ties broken by
    /// descending real part, then descending imaginary part.
    pub fn spectral_cmp(&self, other: &ComplexScalar) -> std::cmp::Ordering {
        other
            .modulus()
            .total_cmp(&self.modulus())
            .then(other.re.total_cmp(&self.re))
            .then(other.im.total_cmp(&self.im))
    }
}

impl fmt::Display for ComplexScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im == 0.0 {
            write!(f, "{}", self.re)
        } else if self.im < 0.0 {
            write!(f, "{}-{}i", self.re, -self.im)
        } else {
            write!(f, "{}+{}i", self.re, self.im)
        }
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::rejected(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::rejected(format!(
                "matrix data has {} entries, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::rejected(format!(
                "matrix entry ({}, {}) is not finite",
                bad / cols,
                bad % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::rejected("matrix must have at least one row"));
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::rejected(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, data)
    }

    /// Matrix with every entry produced by `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// All-zero matrix. Dimensions must be positive.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square matrix with the given diagonal and zeros elsewhere.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut m = Matrix::from_fn(n, n, |_, _| 0.0)?;
        for (i, &v) in diag.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::rejected(format!("diagonal entry {i} is not finite")));
            }
            m.data[i * n + i] = v;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Entry at `(row, col)`. Panics when out of bounds.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.data[row * self.cols + col]
    }

    /// Sets the entry at `(row, col)`. Panics when out of bounds.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.data[row * self.cols + col] = value;
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row index out of bounds");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Flat row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Nested-row copy of the entries.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::rejected(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &bkj) in out_row.iter_mut().zip(other_row) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::rejected(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `self^t` by repeated squaring. `self^0` is the identity.
    pub fn pow(&self, t: u64) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::rejected(format!(
                "matrix power requires a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        let mut exp = t;
        while exp > 0 {
            if exp & 1 == 1 {
                result = result.matmul(&base)?;
            }
            exp >>= 1;
            if exp > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(result)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entrywise sum. Dimensions must match.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Entrywise difference. Dimensions must match.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::rejected(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Sum of diagonal entries. Requires a square matrix.
    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace requires a square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    /// Frobenius norm: sqrt of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute difference from the transpose; 0 for exactly
    /// symmetric matrices.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square(), "asymmetry requires a square matrix");
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `(self + self^T) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrization requires a square matrix");
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] =
                    0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        out
    }

    /// Principal submatrix on the given (row = column) indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::rejected("principal submatrix requires a square matrix"));
        }
        if indices.is_empty() {
            return Err(Error::rejected("index set must be nonempty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows) {
            return Err(Error::rejected(format!(
                "index {bad} out of range for a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Matrix::from_fn(indices.len(), indices.len(), |i, j| {
            self.get(indices[i], indices[j])
        })
    }

    /// Symmetric reordering `B[perm[i]][perm[j]]`, i.e. the matrix after
    /// relabeling coordinate `k` as `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Matrix> {
        if perm.len() != self.rows || !self.is_square() {
            return Err(Error::rejected(
                "permutation length must match the order of a square matrix",
            ));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::rejected("not a permutation of 0..n"));
            }
            seen[p] = true;
        }
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(perm[i], perm[j]))
    }

    /// Eigenvalues in spectral order (descending modulus). Exact closed forms
    /// for orders 1 and 2; shifted QR iteration on a Hessenberg reduction for
    /// order 3 and up.
    pub fn eigenvalues(&self) -> Result<Vec<ComplexScalar>> {
        eigen::eigenvalues(self)
    }

    /// Eigenvalues grouped into clusters of nearby values, with algebraic
    /// counts and (for real clusters) geometric multiplicities.
    pub fn eigen_report(&self, cluster_tol: f64, rank_rel_tol: f64) -> Result<EigenReport> {
        eigen::eigen_report(self, cluster_tol, rank_rel_tol)
    }

    /// Dimension of the nullspace of `self - value * I`, computed as order
    /// minus numeric rank at `rank_rel_tol`. `value` must be an eigenvalue
    /// (within tolerance of a computed one); anything else is rejected.
    pub fn geometric_multiplicity(&self, value: f64, rank_rel_tol: f64) -> Result<usize> {
        eigen::geometric_multiplicity(self, value, rank_rel_tol)
    }

    /// Eigendecomposition of a symmetric matrix (values descending, matching
    /// orthonormal eigenvectors as columns). The input is symmetrized first;
    /// callers are expected to pass matrices that are symmetric up to noise.
    pub fn symmetric_eigen(&self) -> Result<SymmetricEigen> {
        sym::symmetric_eigen(self)
    }

    /// Symmetric positive semidefinite square root. Eigenvalues in
    /// `[-1e-10, 0)` are clipped to zero; anything lower is rejected.
    pub fn psd_sqrt(&self) -> Result<Matrix> {
        sym::psd_sqrt(self)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        svd::singular_values(self)
    }

    /// Number of singular values above `rel_tol` times the largest one.
    pub fn numeric_rank(&self, rel_tol: f64) -> Result<usize> {
        svd::numeric_rank(self, rel_tol)
    }

    /// Ratio of the largest to the smallest singular value; infinite when the
    /// smallest is zero.
    pub fn condition_estimate(&self) -> Result<f64> {
        svd::condition_estimate(self)
    }

    /// Inverse via LU factorization with partial pivoting. Rejects matrices
    /// whose condition estimate exceeds `1/rel_tol`.
    pub fn inverse(&self, rel_tol: f64) -> Result<Matrix> {
        lu::inverse(self, rel_tol)
    }

    /// Determinant via LU factorization with partial pivoting.
    pub fn determinant(&self) -> Result<f64> {
        lu::determinant(self)
    }
}

impl fmt::Display for Matrix {
    /// Compact bracketed rendering, one row per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            write!(f, "[")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6}", self.get(i, j))?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(D::Error::custom)
    }
}
