//! Symmetric eigendecomposition via cyclic Jacobi rotations, plus the
//! positive semidefinite square root built on top of it.
//!
//! Jacobi is slower than tridiagonalization for large matrices but is simple,
//! backward stable, and delivers small eigenvalues and orthogonal vectors to
//! high relative accuracy — exactly what rank decisions downstream need. The
//! matrices here are tiny (factor counts and item counts), so speed is moot.

use super::Matrix;
use crate::error::{Error, Result};

/// Upper bound on full Jacobi sweeps; convergence is quadratic and real
/// inputs settle in well under ten.
const MAX_SWEEPS: usize = 64;

/// Eigenvalues below this are treated as zero jitter by `psd_sqrt`; anything
/// more negative means the input is genuinely not positive semidefinite.
const PSD_CLIP_TOL: f64 = 1e-10;

/// Result of a symmetric eigendecomposition: `A = V diag(values) V^T` with
/// orthonormal columns in `vectors` and `values` sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// Column `k` of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.rows())
            .map(|i| self.vectors.get(i, k))
            .collect()
    }
}

/// Root (off-diagonal) sum of squares — the quantity Jacobi drives to zero.
fn off_diagonal_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * a[i][j] * a[i][j];
        }
    }
    sum.sqrt()
}

pub(super) fn symmetric_eigen(input: &Matrix) -> Result<SymmetricEigen> {
    if !input.is_square() {
        return Err(Error::rejected(format!(
            "symmetric eigendecomposition requires a square matrix, got {}x{}",
            input.rows(),
            input.cols()
        )));
    }
    let n = input.rows();
    let mut a = input.symmetrized().to_rows();
    let mut v = Matrix::identity(n).to_rows();
    let tol = 1e-14 * input.frobenius_norm().max(1.0);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                // Entries already negligible against their diagonal are
                // flushed instead of rotated.
                if apq.abs() <= f64::EPSILON * (a[p][p].abs() + a[q][q].abs()).max(tol) {
                    a[p][q] = 0.0;
                    a[q][p] = 0.0;
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / apq;
                // tan of the rotation angle, the root of smaller magnitude.
                let t = if theta.abs() > 1e15 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[p][p] -= t * apq;
                a[q][q] += t * apq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[i][p];
                        let aiq = a[i][q];
                        a[i][p] = c * aip - s * aiq;
                        a[i][q] = s * aip + c * aiq;
                        a[p][i] = a[i][p];
                        a[q][i] = a[i][q];
                    }
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(Error::IterationBudget {
            operation: "symmetric Jacobi iteration",
            residual: off_diagonal_norm(&a),
            limit: MAX_SWEEPS,
        });
    }

    // Sort eigenpairs by descending eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values: Vec<f64> = order.iter().map(|&k| a[k][k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[i][order[j]])?;
    Ok(SymmetricEigen { values, vectors })
}

/// Symmetric PSD square root `L` with `L L = A` (so `L L^T = A` as well).
pub(super) fn psd_sqrt(input: &Matrix) -> Result<Matrix> {
    let eig = symmetric_eigen(input)?;
    let scale = eig.values.first().map(|v| v.abs()).unwrap_or(0.0).max(1.0);
    let mut roots = Vec::with_capacity(eig.values.len());
    for &value in &eig.values {
        if value < -PSD_CLIP_TOL * scale {
            return Err(Error::rejected(format!(
                "matrix is not positive semidefinite: eigenvalue {value:.6e}"
            )));
        }
        roots.push(value.max(0.0).sqrt());
    }
    // V diag(sqrt) V^T, symmetrized to scrub rounding asymmetry.
    let n = eig.values.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut sum = 0.0;
            for (k, &r) in roots.iter().enumerate() {
                sum += eig.vectors.get(i, k) * r * eig.vectors.get(j, k);
            }
            out.set(i, j, sum);
            out.set(j, i, sum);
        }
    }
    Ok(out)
}
