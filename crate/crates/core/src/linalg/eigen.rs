//! General (nonsymmetric) eigenvalues.
//!
//! Orders 1 and 2 use closed forms. Order 3 and up goes through an
//! orthogonal Hessenberg reduction followed by Francis double-shift QR
//! iteration, following the classic EISPACK `orthes`/`hqr` routines (the
//! eigenvalue-only variant, no eigenvector accumulation). Complex values
//! come out in conjugate pairs; everything is sorted into spectral order
//! (descending modulus) before returning.

use serde::{Deserialize, Serialize};

use super::{ComplexScalar, Matrix};
use crate::error::{Error, Result};

/// Per-eigenvalue iteration budget for the QR loop. The classic routine
/// fails at 30; a little headroom costs nothing and rescues slow deflations.
const MAX_QR_ITER: usize = 50;

/// Eigenvalues of a square matrix, in spectral order.
pub(super) fn eigenvalues(a: &Matrix) -> Result<Vec<ComplexScalar>> {
    if !a.is_square() {
        return Err(Error::rejected(format!(
            "eigenvalues require a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut values = match n {
        1 => vec![ComplexScalar::real(a.get(0, 0))],
        2 => {
            let (l1, l2) = eig2(a.get(0, 0), a.get(0, 1), a.get(1, 0), a.get(1, 1));
            vec![l1, l2]
        }
        _ => {
            let mut h = a.to_rows();
            hessenberg(&mut h);
            hqr(&mut h)?
        }
    };
    values.sort_by(ComplexScalar::spectral_cmp);
    Ok(values)
}

/// Closed-form eigenvalues of `[[a, b], [c, d]]`.
///
/// Real roots are computed with the cancellation-safe pairing: the larger
/// root from the quadratic formula, the smaller as `det / larger`.
fn eig2(a: f64, b: f64, c: f64, d: f64) -> (ComplexScalar, ComplexScalar) {
    let mean = 0.5 * (a + d);
    let det = a * d - b * c;
    // Discriminant of the characteristic polynomial, over 4.
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let root = disc.sqrt();
        let l1 = mean + root.copysign(if mean == 0.0 { 1.0 } else { mean });
        let l2 = if l1 == 0.0 { 0.0 } else { det / l1 };
        (ComplexScalar::real(l1), ComplexScalar::real(l2))
    } else {
        let imag = (-disc).sqrt();
        (
            ComplexScalar::new(mean, imag),
            ComplexScalar::new(mean, -imag),
        )
    }
}

/// In-place orthogonal reduction to upper Hessenberg form (Householder
/// similarity transforms; transformation matrix not accumulated).
#[allow(clippy::needless_range_loop)]
fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    let (low, high) = (0usize, n - 1);
    let mut ort = vec![0.0f64; n];

    for m in (low + 1)..high {
        let mut scale = 0.0;
        for row in h.iter().take(high + 1).skip(m) {
            scale += row[m - 1].abs();
        }
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        // Apply the Householder similarity from both sides.
        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i][j];
            }
            f /= hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[i][j];
            }
            f /= hh;
            for j in m..=high {
                h[i][j] -= f * ort[j];
            }
        }
        h[m][m - 1] = scale * g;
    }
}

/// Francis double-shift QR iteration on an upper Hessenberg matrix,
/// eigenvalues only. Consumes the matrix.
#[allow(clippy::needless_range_loop)]
#[allow(unused_assignments)]
fn hqr(h: &mut [Vec<f64>]) -> Result<Vec<ComplexScalar>> {
    let nn = h.len();
    let low = 0usize;
    let eps = f64::EPSILON;
    let mut d = vec![0.0f64; nn]; // real parts
    let mut e = vec![0.0f64; nn]; // imaginary parts
    let mut exshift = 0.0f64;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut x, mut y, mut w) = (0.0f64, 0.0f64, 0.0f64);

    let mut norm = 0.0f64;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[i][j].abs();
        }
    }
    if norm == 0.0 {
        return Ok(vec![ComplexScalar::real(0.0); nn]);
    }

    let mut n = nn - 1;
    let mut iter = 0usize;
    loop {
        // Look for a single small subdiagonal element.
        let mut l = n;
        while l > low {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            // One root found.
            h[n][n] += exshift;
            d[n] = h[n][n];
            e[n] = 0.0;
            if n == low {
                break;
            }
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            // Two roots found (a real pair or a complex conjugate pair).
            w = h[n][n - 1] * h[n - 1][n];
            p = 0.5 * (h[n - 1][n - 1] - h[n][n]);
            q = p * p + w;
            z = q.abs().sqrt();
            h[n][n] += exshift;
            h[n - 1][n - 1] += exshift;
            x = h[n][n];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[n - 1] = x + z;
                d[n] = d[n - 1];
                if z != 0.0 {
                    d[n] = x - w / z;
                }
                e[n - 1] = 0.0;
                e[n] = 0.0;
            } else {
                d[n - 1] = x + p;
                d[n] = x + p;
                e[n - 1] = z;
                e[n] = -z;
            }
            if n == low + 1 {
                break;
            }
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet; form a shift.
            x = h[n][n];
            y = h[n - 1][n - 1];
            w = h[n][n - 1] * h[n - 1][n];

            if iter == 10 || iter == 20 {
                // Exceptional shift.
                exshift += x;
                for i in low..=n {
                    h[i][i] -= x;
                }
                s = h[n][n - 1].abs() + h[n - 1][n - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                // Ad hoc shift for stubborn cases.
                s = 0.5 * (y - x);
                s = s * s + w;
                if s > 0.0 {
                    let mut root = s.sqrt();
                    if y < x {
                        root = -root;
                    }
                    let shift = x - w / (0.5 * (y - x) + root);
                    for i in low..=n {
                        h[i][i] -= shift;
                    }
                    exshift += shift;
                    x = 0.964;
                    y = 0.964;
                    w = 0.964;
                }
            }
            iter += 1;
            if iter > MAX_QR_ITER {
                return Err(Error::IterationBudget {
                    operation: "eigenvalue QR iteration",
                    residual: h[n][n - 1].abs(),
                    limit: MAX_QR_ITER,
                });
            }

            // Look for two consecutive small subdiagonal elements.
            let mut m = n - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=n {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            for k in m..n {
                let notlast = k != n - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != m {
                    h[k][k - 1] = -s * x;
                } else if l != m {
                    h[k][k - 1] = -h[k][k - 1];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                // Row modification.
                for j in k..nn {
                    let mut pp = h[k][j] + q * h[k + 1][j];
                    if notlast {
                        pp += r * h[k + 2][j];
                        h[k + 2][j] -= pp * z;
                    }
                    h[k][j] -= pp * x;
                    h[k + 1][j] -= pp * y;
                }
                // Column modification.
                for i in 0..=n.min(k + 3) {
                    let mut pp = x * h[i][k] + y * h[i][k + 1];
                    if notlast {
                        pp += z * h[i][k + 2];
                        h[i][k + 2] -= pp * r;
                    }
                    h[i][k] -= pp;
                    h[i][k + 1] -= pp * q;
                }
            }
        }
    }

    Ok(d.into_iter()
        .zip(e)
        .map(|(re, im)| ComplexScalar::new(re, im))
        .collect())
}

/// One group of nearby eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    /// Mean of the clustered values.
    pub value: ComplexScalar,
    /// Number of eigenvalues in the cluster (with multiplicity).
    pub algebraic: usize,
    /// Nullity of `A - value * I`; only computed for real clusters.
    pub geometric: Option<usize>,
}

/// Eigenvalues plus a clustering into repeated values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    /// All eigenvalues in spectral order.
    pub values: Vec<ComplexScalar>,
    /// Clusters of values closer than the clustering tolerance, in the order
    /// their first member appears in `values`.
    pub clusters: Vec<EigenCluster>,
}

pub(super) fn eigen_report(a: &Matrix, cluster_tol: f64, rank_rel_tol: f64) -> Result<EigenReport> {
    if cluster_tol < 0.0 {
        return Err(Error::rejected("cluster tolerance must be nonnegative"));
    }
    let values = eigenvalues(a)?;
    let mut groups: Vec<(ComplexScalar, Vec<ComplexScalar>)> = Vec::new();
    for v in &values {
        match groups.iter_mut().find(|(rep, _)| rep.dist(v) <= cluster_tol) {
            Some((_, members)) => members.push(*v),
            None => groups.push((*v, vec![*v])),
        }
    }
    let mut clusters = Vec::with_capacity(groups.len());
    for (_, members) in groups {
        let k = members.len() as f64;
        let value = ComplexScalar::new(
            members.iter().map(|m| m.re).sum::<f64>() / k,
            members.iter().map(|m| m.im).sum::<f64>() / k,
        );
        let geometric = if value.is_real(cluster_tol) {
            Some(nullity(a, value.re, rank_rel_tol)?)
        } else {
            None
        };
        clusters.push(EigenCluster {
            value,
            algebraic: members.len(),
            geometric,
        });
    }
    Ok(EigenReport { values, clusters })
}

/// Dimension of the nullspace of `a - value * I`, after checking that
/// `value` actually is an eigenvalue of `a`: it must lie within
/// `max(rank_rel_tol, 1e-7) * max(1, spectral radius)` of a computed
/// eigenvalue (the floor reflects the accuracy limit of eigenvalue
/// computation on clustered spectra). Anything farther is a rejected input,
/// not a silent zero.
pub(super) fn geometric_multiplicity(a: &Matrix, value: f64, rank_rel_tol: f64) -> Result<usize> {
    if !a.is_square() {
        return Err(Error::rejected(
            "geometric multiplicity requires a square matrix",
        ));
    }
    let values = eigenvalues(a)?;
    let scale = values
        .first()
        .map(|v| v.modulus())
        .unwrap_or(0.0)
        .max(1.0);
    let target = ComplexScalar::real(value);
    let nearest = values
        .iter()
        .map(|v| v.dist(&target))
        .fold(f64::INFINITY, f64::min);
    if nearest > rank_rel_tol.max(1e-7) * scale {
        return Err(Error::rejected(format!(
            "{value} is not an eigenvalue of this matrix (nearest computed \
             eigenvalue is {nearest:.3e} away)"
        )));
    }
    nullity(a, value, rank_rel_tol)
}

/// Dimension of the nullspace of `a - value * I`, with no check that `value`
/// is an eigenvalue (a non-eigenvalue simply yields 0).
fn nullity(a: &Matrix, value: f64, rank_rel_tol: f64) -> Result<usize> {
    let mut shifted = a.clone();
    for i in 0..a.rows() {
        shifted.set(i, i, shifted.get(i, i) - value);
    }
    Ok(a.rows() - shifted.numeric_rank(rank_rel_tol)?)
}
