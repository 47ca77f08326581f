//! Long-run behavior of the factor transition matrix.
//!
//! The central question: does `B^t` settle as `t` grows, and if so, how many
//! dimensions does the limit keep? Powers of `B` converge exactly when every
//! eigenvalue either lies strictly inside the unit circle or equals 1 with
//! matching geometric and algebraic multiplicity (a semisimple unit
//! eigenvalue). The rank of the limit — the number of factor dimensions that
//! survive equilibration — equals the multiplicity of eigenvalue 1.
//!
//! The limit itself is computed by repeated squaring rather than through an
//! eigenvector or Jordan basis: numeric Jordan structure is notoriously
//! ill-conditioned, while squaring is stable and self-verifying (the result
//! must be idempotent). Two independent routes to the asymptotic rank — the
//! eigenvalue-1 multiplicity and the numeric rank of the computed limit —
//! are required to agree, and disagreement is a hard error.
//!
//! Factors split into coupling classes: connected components of the
//! undirected graph with an edge wherever either directed effect between two
//! factors is nonzero. `B` is block-diagonal under any relabeling that groups
//! the classes, so every long-run question decomposes class by class, and
//! per-class structure gives cheap rank bounds (singletons are exact; a
//! coupled pair contributes at most one dimension; a strictly positive block
//! contributes at most one by Perron–Frobenius; mixed-sign blocks can keep
//! more).

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{ComplexScalar, Matrix};

/// Default half-width of the band in which an eigenvalue counts as 1, and of
/// the band around the unit circle that is reported as too close to call.
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-9;

/// Default threshold below which a matrix entry is a structural zero for the
/// coupling graph and positivity tests.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Default limit on repeated squarings in [`limit_matrix`]; 64 doublings is
/// `B^(2^64)`, far past settling for any matrix that passes classification.
pub const DEFAULT_MAX_DOUBLINGS: usize = 64;

/// Long-run classification of a square matrix's powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceStatus {
    /// `B^t` has a finite limit.
    Converges,
    /// `B^t` grows without bound (an eigenvalue outside the unit circle, or
    /// a defective eigenvalue cluster at 1).
    DivergesUnbounded,
    /// `B^t` stays bounded but never settles (a modulus-1 eigenvalue other
    /// than 1), or sits inside the tolerance band around the unit circle
    /// where the dichotomy cannot be resolved numerically.
    DivergesOscillates,
}

/// Outcome of [`classify_convergence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// All eigenvalues in spectral order.
    pub eigenvalues: Vec<ComplexScalar>,
    pub status: ConvergenceStatus,
    /// Human-readable statement of the decisive criterion.
    pub reason: String,
    /// The limit of `B^t`; present exactly when `status` is `Converges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<Matrix>,
    /// Rank of the limit (= multiplicity of eigenvalue 1); present exactly
    /// when `status` is `Converges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymptotic_rank: Option<usize>,
}

/// Coupling classes of a square matrix and the relabeling that makes the
/// block structure explicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalencePartition {
    /// Disjoint sorted index sets covering `0..m`, ordered by smallest
    /// member. Two indices share a class iff they are connected through
    /// nonzero entries of `B` (in either direction).
    pub classes: Vec<Vec<usize>>,
    /// Concatenation of the classes: reading position `k` of the permutation
    /// gives the original index placed at position `k`, so
    /// [`Matrix::permuted`] with this vector yields exact block-diagonal
    /// form, one block per class.
    pub permutation: Vec<usize>,
}

/// Structural category of one coupling class, deciding which a-priori rank
/// bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Single factor with self-effect 1: contributes exactly one dimension.
    SingletonUnit,
    /// Single factor with |self-effect| < 1: contributes nothing.
    SingletonDecay,
    /// Two coupled factors: contribute at most one dimension.
    Pair,
    /// Three or more factors with strictly positive block: at most one
    /// dimension, by the uniqueness of the dominant eigenvalue.
    PositivePerron,
    /// No a-priori bound (mixed signs, structural zeros inside the class, or
    /// a non-convergent singleton).
    General,
}

/// A-priori rank bound attached to a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankBound {
    /// The class contributes at most this many dimensions.
    AtMost(usize),
    /// The class contributes exactly this many dimensions.
    Exact(usize),
}

impl std::fmt::Display for RankBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankBound::AtMost(k) => write!(f, "≤{k}"),
            RankBound::Exact(k) => write!(f, "exact {k}"),
        }
    }
}

impl Serialize for RankBound {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RankBound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        if let Some(rest) = text.strip_prefix("≤") {
            return rest
                .trim()
                .parse()
                .map(RankBound::AtMost)
                .map_err(D::Error::custom);
        }
        if let Some(rest) = text.strip_prefix("exact ") {
            return rest
                .trim()
                .parse()
                .map(RankBound::Exact)
                .map_err(D::Error::custom);
        }
        Err(D::Error::custom(format!("unrecognized rank bound {text:?}")))
    }
}

/// Per-class analysis from [`block_decompose`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// Original factor indices in this class, sorted ascending.
    pub indices: Vec<usize>,
    /// The principal submatrix of `B` on those indices.
    pub block: Matrix,
    pub bound_kind: BoundKind,
    /// A-priori bound; absent for a non-convergent class with no bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_bound: Option<RankBound>,
    /// Dimensions this class keeps in the limit; absent when the block does
    /// not converge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_rank: Option<usize>,
    pub convergent: bool,
}

fn require_square(b: &Matrix, what: &str) -> Result<()> {
    if !b.is_square() {
        return Err(Error::rejected(format!(
            "{what} requires a square matrix, got {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn require_positive_tol(tol: f64, what: &str) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::rejected(format!(
            "{what} must be a positive finite real, got {tol}"
        )));
    }
    Ok(())
}

/// Absolute singular-value cut used to rank the computed limit matrix. The
/// limit is (up to stop-rule noise of order `tol`) idempotent, and every
/// nonzero singular value of an idempotent is at least 1 — so signal and
/// noise are separated by many orders and an absolute threshold between them
/// is reliable. A relative cut would misfire when the true limit is the zero
/// matrix and the computed one is pure noise.
fn limit_rank_tol(tol: f64) -> f64 {
    (100.0 * tol).clamp(1e-6, 1e-3)
}

/// Decides whether powers of `b` settle, and if so computes the limit and
/// its rank.
///
/// `tol` is the eigenvalue resolution: values within `tol` of 1 are treated
/// as exactly 1, moduli beyond `1 + tol` as outside the unit circle, and
/// moduli within `tol` of the circle but away from 1 as unresolvable
/// (reported as oscillating/near-critical rather than guessed).
///
/// When the status is `Converges`, the rank is computed twice — as the
/// multiplicity of eigenvalue 1 and as the numeric rank of the limit — and
/// the two must agree; disagreement is reported as a numeric failure rather
/// than a silent answer.
pub fn classify_convergence(b: &Matrix, tol: f64) -> Result<ConvergenceReport> {
    require_square(b, "convergence classification")?;
    require_positive_tol(tol, "convergence tolerance")?;
    let m = b.rows();
    let eigenvalues = b.eigenvalues()?;
    let one = ComplexScalar::real(1.0);

    let mut unit_count = 0usize;
    let mut outside: Option<ComplexScalar> = None;
    let mut critical: Option<ComplexScalar> = None;
    for value in &eigenvalues {
        if value.dist(&one) <= tol {
            unit_count += 1;
        } else if value.modulus() > 1.0 + tol {
            outside.get_or_insert(*value);
        } else if value.modulus() >= 1.0 - tol {
            critical.get_or_insert(*value);
        }
    }

    let mut report = ConvergenceReport {
        eigenvalues,
        status: ConvergenceStatus::Converges,
        reason: String::new(),
        limit: None,
        asymptotic_rank: None,
    };

    if let Some(value) = outside {
        report.status = ConvergenceStatus::DivergesUnbounded;
        report.reason = format!(
            "eigenvalue {value} has modulus {:.6} > 1; powers grow without bound",
            value.modulus()
        );
        return Ok(report);
    }
    if let Some(value) = critical {
        report.status = ConvergenceStatus::DivergesOscillates;
        report.reason = format!(
            "eigenvalue {value} has modulus within {tol:.1e} of the unit circle but is \
             not 1; powers oscillate or sit too close to the critical circle to resolve"
        );
        return Ok(report);
    }

    if unit_count > 0 {
        // Semisimplicity: the nullity of B - I must match the number of
        // eigenvalues at 1. Singular values of B - I below tol (relative to
        // the scale of B) count as zero, consistent with treating
        // eigenvalues within tol of 1 as exactly 1.
        let shifted = b.sub(&Matrix::identity(m))?;
        let scale = b.singular_values()?[0].max(1.0);
        let shifted_rank = shifted
            .singular_values()?
            .iter()
            .filter(|&&s| s > tol * scale)
            .count();
        let geometric = m - shifted_rank;
        if geometric != unit_count {
            report.status = ConvergenceStatus::DivergesUnbounded;
            report.reason = format!(
                "eigenvalue cluster at 1 (size {unit_count}) has geometric multiplicity \
                 {geometric}; the defect makes powers grow polynomially"
            );
            return Ok(report);
        }
        report.reason = format!(
            "eigenvalue 1 is semisimple with multiplicity {unit_count}; all other \
             eigenvalues lie inside the unit circle"
        );
    } else {
        let radius = report
            .eigenvalues
            .first()
            .map(|v| v.modulus())
            .unwrap_or(0.0);
        report.reason = format!("spectral radius {radius:.6} < 1; powers decay to zero");
    }

    let limit = limit_matrix(b, tol, DEFAULT_MAX_DOUBLINGS)?;
    let cut = limit_rank_tol(tol);
    let limit_rank = limit
        .singular_values()?
        .iter()
        .filter(|&&s| s > cut)
        .count();
    if limit_rank != unit_count {
        return Err(Error::RankCheckFailed {
            expected: unit_count,
            computed: limit_rank,
            context: "limit-matrix rank agreement",
        });
    }
    // A spectral radius below 1 means the true limit is exactly zero; the
    // squaring residue is pure noise, so store the exact answer.
    report.limit = Some(if unit_count == 0 {
        Matrix::zeros(m, m)
    } else {
        limit
    });
    report.asymptotic_rank = Some(unit_count);
    Ok(report)
}

/// Limit of `B^t` by repeated squaring: stop once one more squaring moves
/// the matrix by less than `abs_tol` in Frobenius norm.
///
/// Intended for matrices already classified as convergent. Squaring only
/// probes `B^(2^k)`, so it cannot by itself rule out oscillation: a rotation
/// whose period divides a power of two stabilizes under squaring even though
/// `B^t` never settles. Callers must gate on [`classify_convergence`] first;
/// on non-convergent input this either returns a no-limit error (budget
/// exhausted or entries blown up) or, for such aliasing cases, a matrix that
/// is not the limit of `B^t`.
pub fn limit_matrix(b: &Matrix, abs_tol: f64, max_doublings: usize) -> Result<Matrix> {
    require_square(b, "limit computation")?;
    require_positive_tol(abs_tol, "limit tolerance")?;
    if max_doublings == 0 {
        return Err(Error::rejected("max_doublings must be positive"));
    }
    let mut power = b.clone();
    let mut last_change = f64::INFINITY;
    for _ in 0..max_doublings {
        let next = power.matmul(&power)?;
        last_change = next.sub(&power)?.frobenius_norm();
        if !last_change.is_finite() {
            break;
        }
        if last_change < abs_tol {
            return Ok(next);
        }
        power = next;
    }
    Err(Error::NoLimit {
        max_doublings,
        last_change,
    })
}

/// Rank of the limiting factor space: the number of dimensions `B^t`
/// preserves as `t → ∞`. Rejects non-convergent matrices.
pub fn asymptotic_rank(b: &Matrix, tol: f64) -> Result<usize> {
    let report = classify_convergence(b, tol)?;
    match report.status {
        ConvergenceStatus::Converges => Ok(report
            .asymptotic_rank
            .expect("convergent report carries a rank")),
        _ => Err(Error::rejected(format!(
            "asymptotic rank requires a convergent matrix: {}",
            report.reason
        ))),
    }
}

/// Union-find over `0..n` with path halving and union by size.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Connected components of the symmetrized nonzero pattern of `b`: indices
/// `i` and `j` are coupled when `|b_ij| > zero_tol` or `|b_ji| > zero_tol`.
pub fn equivalence_classes(b: &Matrix, zero_tol: f64) -> Result<EquivalencePartition> {
    require_square(b, "coupling-class analysis")?;
    if !(zero_tol >= 0.0 && zero_tol.is_finite()) {
        return Err(Error::rejected(format!(
            "zero tolerance must be a nonnegative finite real, got {zero_tol}"
        )));
    }
    let m = b.rows();
    let mut uf = UnionFind::new(m);
    for i in 0..m {
        for j in (i + 1)..m {
            if b.get(i, j).abs() > zero_tol || b.get(j, i).abs() > zero_tol {
                uf.union(i, j);
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..m {
        let root = uf.find(i);
        by_root[root].push(i);
    }
    // Members are pushed in ascending order, so each class is sorted and the
    // classes (keyed by their root's first member) sort by smallest member.
    let mut classes: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
    classes.sort_by_key(|c| c[0]);
    let permutation = classes.iter().flatten().copied().collect();
    Ok(EquivalencePartition {
        classes,
        permutation,
    })
}

/// Extracts each class's block of `b` and attaches the structural rank bound
/// and the block's own convergence analysis.
///
/// `tol` plays the same role as in [`classify_convergence`]; `zero_tol` is
/// the strict-positivity threshold for the Perron case. The partition must
/// cover the index range of `b` with disjoint classes (i.e. come from
/// [`equivalence_classes`] on the same matrix).
pub fn block_decompose(
    b: &Matrix,
    partition: &EquivalencePartition,
    tol: f64,
    zero_tol: f64,
) -> Result<Vec<ClassReport>> {
    require_square(b, "block decomposition")?;
    require_positive_tol(tol, "convergence tolerance")?;
    let m = b.rows();
    let mut seen = vec![false; m];
    for &i in partition.classes.iter().flatten() {
        if i >= m || seen[i] {
            return Err(Error::rejected(
                "partition does not match the matrix: classes must disjointly cover its indices",
            ));
        }
        seen[i] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::rejected(
            "partition does not match the matrix: classes must disjointly cover its indices",
        ));
    }

    let mut reports = Vec::with_capacity(partition.classes.len());
    for class in &partition.classes {
        let block = b.select(class)?;
        let n = class.len();

        // Singletons are decided directly from the single entry.
        if n == 1 {
            let entry = block.get(0, 0);
            let report = if (entry - 1.0).abs() <= tol {
                ClassReport {
                    indices: class.clone(),
                    block,
                    bound_kind: BoundKind::SingletonUnit,
                    rank_bound: Some(RankBound::Exact(1)),
                    exact_rank: Some(1),
                    convergent: true,
                }
            } else if entry.abs() < 1.0 - tol {
                ClassReport {
                    indices: class.clone(),
                    block,
                    bound_kind: BoundKind::SingletonDecay,
                    rank_bound: Some(RankBound::Exact(0)),
                    exact_rank: Some(0),
                    convergent: true,
                }
            } else {
                // |entry| >= 1 but not 1 itself: powers grow or flip sign.
                ClassReport {
                    indices: class.clone(),
                    block,
                    bound_kind: BoundKind::General,
                    rank_bound: None,
                    exact_rank: None,
                    convergent: false,
                }
            };
            reports.push(report);
            continue;
        }

        let strictly_positive = block.as_slice().iter().all(|&v| v > zero_tol);
        let (bound_kind, a_priori) = if n == 2 {
            (BoundKind::Pair, Some(1))
        } else if strictly_positive {
            (BoundKind::PositivePerron, Some(1))
        } else {
            (BoundKind::General, None)
        };

        let analysis = classify_convergence(&block, tol)?;
        let convergent = analysis.status == ConvergenceStatus::Converges;
        let exact_rank = if convergent {
            analysis.asymptotic_rank
        } else {
            None
        };
        if let (Some(bound), Some(rank)) = (a_priori, exact_rank) {
            if rank > bound {
                return Err(Error::RankCheckFailed {
                    expected: bound,
                    computed: rank,
                    context: "per-class rank bound",
                });
            }
        }
        let rank_bound = match (a_priori, exact_rank, convergent) {
            (Some(bound), _, _) => Some(RankBound::AtMost(bound)),
            (None, Some(rank), true) => Some(RankBound::Exact(rank)),
            (None, _, false) => None,
            (None, None, true) => None,
        };
        reports.push(ClassReport {
            indices: class.clone(),
            block,
            bound_kind,
            rank_bound,
            exact_rank,
            convergent,
        });
    }
    Ok(reports)
}
