//! LU factorization with partial pivoting: inversion and determinants.

use super::Matrix;
use crate::error::{Error, Result};

/// Packed LU factors (Doolittle, unit lower triangle) with the row-swap sign.
struct Lu {
    factors: Vec<Vec<f64>>,
    pivots: Vec<usize>,
    sign: f64,
}

#[allow(clippy::needless_range_loop)]
fn factorize(a: &Matrix) -> Result<Lu> {
    if !a.is_square() {
        return Err(Error::rejected(format!(
            "LU factorization requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut lu = a.to_rows();
    let mut pivots: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;

    for k in 0..n {
        // Partial pivoting: bring the largest remaining entry in column k up.
        let mut pivot_row = k;
        for i in (k + 1)..n {
            if lu[i][k].abs() > lu[pivot_row][k].abs() {
                pivot_row = i;
            }
        }
        if pivot_row != k {
            lu.swap(k, pivot_row);
            pivots.swap(k, pivot_row);
            sign = -sign;
        }
        let pivot = lu[k][k];
        if pivot == 0.0 {
            // Exactly singular; leave the zero pivot in place. The
            // determinant is zero and solves will refuse.
            continue;
        }
        for i in (k + 1)..n {
            lu[i][k] /= pivot;
            let factor = lu[i][k];
            if factor == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                lu[i][j] -= factor * lu[k][j];
            }
        }
    }
    Ok(Lu {
        factors: lu,
        pivots,
        sign,
    })
}

pub(super) fn determinant(a: &Matrix) -> Result<f64> {
    let lu = factorize(a)?;
    let mut det = lu.sign;
    for (k, row) in lu.factors.iter().enumerate() {
        det *= row[k];
    }
    Ok(det)
}

pub(super) fn inverse(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::rejected(format!(
            "inversion requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !(rel_tol > 0.0 && rel_tol.is_finite()) {
        return Err(Error::rejected(format!(
            "inversion tolerance must be a positive finite real, got {rel_tol}"
        )));
    }
    let condition = a.condition_estimate()?;
    if !condition.is_finite() || condition > 1.0 / rel_tol {
        return Err(Error::Singular { condition, rel_tol });
    }

    let n = a.rows();
    let lu = factorize(a)?;
    if (0..n).any(|k| lu.factors[k][k] == 0.0) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
            rel_tol,
        });
    }

    // Solve A X = I one permuted unit column at a time.
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        let mut x = vec![0.0f64; n];
        for (row, &p) in lu.pivots.iter().enumerate() {
            x[row] = if p == col { 1.0 } else { 0.0 };
        }
        // Forward substitution with the unit lower triangle.
        for i in 1..n {
            for j in 0..i {
                x[i] -= lu.factors[i][j] * x[j];
            }
        }
        // Back substitution with the upper triangle.
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                x[i] -= lu.factors[i][j] * x[j];
            }
            x[i] /= lu.factors[i][i];
        }
        for (row, &v) in x.iter().enumerate() {
            inv.set(row, col, v);
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn inverse_of_small_matrix_is_exact() {
        let a = mat(&[&[2.0, 1.0], &[1.0, 1.0]]);
        let inv = a.inverse(1e-8).unwrap();
        let expected = mat(&[&[1.0, -1.0], &[-1.0, 2.0]]);
        assert!(inv.sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_refused() {
        let a = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(a.inverse(1e-8), Err(Error::Singular { .. })));
    }

    #[test]
    fn near_singular_matrix_is_refused_at_loose_tolerance() {
        // Condition is about 4e8: invertible at 1e-12 but not at 1e-6.
        let a = mat(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-8]]);
        assert!(a.inverse(1e-12).is_ok());
        assert!(matches!(a.inverse(1e-6), Err(Error::Singular { .. })));
    }

    #[test]
    fn inverse_residual_is_small_for_well_conditioned_matrices() {
        // Round trip: A * inverse(A) = I whenever the condition estimate is
        // below 1e6.
        let mut rng = StdRng::seed_from_u64(600);
        let mut tested = 0;
        while tested < 30 {
            let n = rng.gen_range(1..=7);
            let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            if a.condition_estimate().unwrap() >= 1e6 {
                continue;
            }
            tested += 1;
            let inv = a.inverse(1e-8).unwrap();
            let residual = a.matmul(&inv).unwrap().sub(&Matrix::identity(n)).unwrap();
            assert!(
                residual.max_abs() <= 1e-8,
                "residual {} too large for n={n}",
                residual.max_abs()
            );
        }
    }

    #[test]
    fn determinant_matches_known_values() {
        assert!((mat(&[&[1.0, 2.0], &[3.0, 4.0]]).determinant().unwrap() + 2.0).abs() < 1e-14);
        assert!((Matrix::identity(5).determinant().unwrap() - 1.0).abs() < 1e-14);
        let t = mat(&[&[2.0, 5.0, 1.0], &[0.0, 3.0, 7.0], &[0.0, 0.0, 0.5]]);
        assert!((t.determinant().unwrap() - 3.0).abs() < 1e-14);
        let singular = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(singular.determinant().unwrap().abs() < 1e-14);
    }

    #[test]
    fn non_square_input_is_rejected() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.inverse(1e-8), Err(Error::Rejected(_))));
        assert!(matches!(a.determinant(), Err(Error::Rejected(_))));
    }

    #[test]
    fn tolerance_must_be_positive() {
        let a = Matrix::identity(2);
        assert!(matches!(a.inverse(0.0), Err(Error::Rejected(_))));
    }
}
