//! Singular values by one-sided (Hestenes) Jacobi orthogonalization, and the
//! rank / conditioning queries built on them.
//!
//! One-sided Jacobi works directly on the matrix columns, never forming
//! `A^T A`, so small singular values keep their relative accuracy — rank
//! decisions at tight tolerances depend on that.

use super::Matrix;
use crate::error::{Error, Result};

/// Upper bound on orthogonalization sweeps; quadratic convergence makes
/// anything near this unreachable for the matrix sizes in this crate.
const MAX_SWEEPS: usize = 60;

pub(super) fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    // Normalize the overall scale so tiny matrices (for instance limits of
    // contractions, whose entries can be denormal) behave exactly like their
    // O(1) rescalings; singular values are restored at the end.
    let scale = a.max_abs();
    if scale == 0.0 {
        return Ok(vec![0.0; a.rows().min(a.cols())]);
    }
    // Work on the orientation with at least as many rows as columns; the
    // singular values of A and A^T coincide.
    let work = if a.rows() >= a.cols() {
        a.scaled(1.0 / scale)
    } else {
        a.transpose().scaled(1.0 / scale)
    };
    let (m, n) = (work.rows(), work.cols());
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| work.get(i, j)).collect())
        .collect();

    // Columns this far below the (unit) matrix scale are exact zeros for
    // every downstream purpose; rotating against them only churns rounding
    // noise.
    let negligible = (n as f64) * f64::EPSILON * f64::EPSILON;

    let mut worst = 0.0f64;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        worst = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let (cp, cq) = {
                    let (head, tail) = cols.split_at_mut(q);
                    (&mut head[p], &mut tail[0])
                };
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for (a, b) in cp.iter().zip(cq.iter()) {
                    alpha += a * a;
                    beta += b * b;
                    gamma += a * b;
                }
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let bound = (alpha * beta).sqrt();
                worst = worst.max(gamma.abs() / bound);
                if gamma.abs() <= f64::EPSILON * bound {
                    continue;
                }
                // Rotation angle that orthogonalizes the column pair.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = c * t;
                for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
                    let va = *a;
                    let vb = *b;
                    *a = c * va - s * vb;
                    *b = s * va + c * vb;
                }
            }
        }
        if worst <= 4.0 * f64::EPSILON {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationBudget {
            operation: "one-sided Jacobi orthogonalization",
            residual: worst,
            limit: MAX_SWEEPS,
        });
    }

    let mut sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt() * scale)
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

/// Number of singular values above `rel_tol` times the largest one.
pub(super) fn numeric_rank(a: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol.is_finite()) {
        return Err(Error::rejected(format!(
            "rank tolerance must be a positive finite real, got {rel_tol}"
        )));
    }
    let sigma = singular_values(a)?;
    let threshold = rel_tol * sigma[0];
    Ok(sigma.iter().filter(|&&s| s > threshold).count())
}

/// `sigma_max / sigma_min`; infinite when the smallest singular value is
/// exactly zero.
pub(super) fn condition_estimate(a: &Matrix) -> Result<f64> {
    let sigma = singular_values(a)?;
    let smax = sigma[0];
    let smin = *sigma.last().expect("at least one singular value");
    if smax == 0.0 {
        // The zero matrix: conventionally infinite.
        return Ok(f64::INFINITY);
    }
    if smin == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(smax / smin)
}
