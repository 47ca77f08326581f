//! Single-wave factor analysis: dimensionality estimates and loading
//! extraction from one covariance matrix.
//!
//! Three estimators are provided so conclusions about the number of factors
//! do not hinge on any one of them: `reduced-rank` (numeric rank of
//! `S - I`, exact on population covariances because the measurement error
//! variance is 1), `parallel-analysis` (eigenvalues compared against a
//! seeded pure-noise benchmark at matched sample size), and `gap-ratio`
//! (largest adjacent eigenvalue ratio). Loading extraction is principal-axis
//! style: top eigenvectors of `S - I`, scaled by the square roots of their
//! clipped eigenvalues.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::TrajectoryPanel;
use crate::rng::{derive_rng, DOMAIN_NOISE};

/// Covariance inputs may be asymmetric up to this entrywise tolerance;
/// anything beyond is a rejected input, not a matrix to silently symmetrize.
pub const ASYMMETRY_TOL: f64 = 1e-8;

/// How to turn a covariance matrix into a factor count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimMethod {
    /// Numeric rank of `S - I`; exact on population covariances.
    ReducedRank,
    /// Eigenvalues of `S` exceeding a pure-noise percentile benchmark.
    ParallelAnalysis,
    /// Position of the largest adjacent eigenvalue ratio.
    GapRatio,
}

impl fmt::Display for DimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DimMethod::ReducedRank => "reduced-rank",
            DimMethod::ParallelAnalysis => "parallel-analysis",
            DimMethod::GapRatio => "gap-ratio",
        })
    }
}

impl FromStr for DimMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced-rank" => Ok(DimMethod::ReducedRank),
            "parallel-analysis" => Ok(DimMethod::ParallelAnalysis),
            "gap-ratio" => Ok(DimMethod::GapRatio),
            other => Err(Error::rejected(format!(
                "unknown dimensionality method {other:?}; expected reduced-rank, \
                 parallel-analysis, or gap-ratio"
            ))),
        }
    }
}

/// Tuning knobs for [`estimate_dimensionality`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionParams {
    /// Relative singular-value tolerance for the reduced-rank method.
    pub rank_rel_tol: f64,
    /// Sample size that produced the covariance; required by parallel
    /// analysis (the noise benchmark must match it), ignored otherwise.
    pub sample_size: Option<usize>,
    /// Monte Carlo replicates for the parallel-analysis benchmark.
    pub replicates: usize,
    /// Percentile (0, 100] of the benchmark distribution used as threshold.
    pub percentile: f64,
    /// Seed for the benchmark noise streams.
    pub noise_seed: u64,
    /// Largest k considered by the gap-ratio method; defaults to p - 1.
    pub max_k: Option<usize>,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            rank_rel_tol: 1e-6,
            sample_size: None,
            replicates: 200,
            percentile: 95.0,
            noise_seed: 0,
            max_k: None,
        }
    }
}

/// Outcome of a dimensionality estimate: the full eigenvalue spectrum, the
/// method, the count, and the threshold that produced the count (singular
/// value cut for reduced-rank, noise percentile for parallel analysis,
/// winning ratio for gap-ratio).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionalityReport {
    pub eigenvalues: Vec<f64>,
    pub method: DimMethod,
    pub estimated_factors: usize,
    pub threshold_used: f64,
}

/// Extracted loadings: `p x k` matrix with columns in descending order of
/// variance explained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadingEstimate {
    pub loadings: Matrix,
    pub variance_explained: Vec<f64>,
}

/// Absolute-covariance summary between two disjoint item blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossBlockSummary {
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Unbiased (n-1 denominator) covariance of the items at one wave.
pub fn sample_covariance(panel: &TrajectoryPanel, wave: usize) -> Result<Matrix> {
    if wave >= panel.n_waves() {
        return Err(Error::rejected(format!(
            "wave {wave} out of range: panel has waves 0..{}",
            panel.n_waves()
        )));
    }
    let n = panel.n_subjects();
    if n < 2 {
        return Err(Error::rejected(
            "sample covariance requires at least 2 subjects",
        ));
    }
    let p = panel.n_items();
    let mut mean = vec![0.0f64; p];
    for row in panel.wave_rows(wave) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Accumulate the upper triangle and mirror, so the result is symmetric
    // to the bit.
    let mut cov = Matrix::zeros(p, p);
    for row in panel.wave_rows(wave) {
        for i in 0..p {
            let di = row[i] - mean[i];
            for j in i..p {
                cov.set(i, j, cov.get(i, j) + di * (row[j] - mean[j]));
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..p {
        for j in i..p {
            let value = cov.get(i, j) / denom;
            cov.set(i, j, value);
            cov.set(j, i, value);
        }
    }
    Ok(cov)
}

fn require_symmetric_covariance(s: &Matrix, what: &str) -> Result<()> {
    if !s.is_square() {
        return Err(Error::rejected(format!(
            "{what} requires a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let asym = s.asymmetry();
    if asym > ASYMMETRY_TOL {
        return Err(Error::rejected(format!(
            "{what} requires a symmetric matrix; asymmetry {asym:.3e} exceeds {ASYMMETRY_TOL:.0e}"
        )));
    }
    Ok(())
}

/// Estimates the number of factors behind the covariance `S` with the given
/// method. The returned report carries the full eigenvalue spectrum of `S`
/// so the decision can be audited (or scree-plotted) afterwards.
pub fn estimate_dimensionality(
    s: &Matrix,
    method: DimMethod,
    params: &ExtractionParams,
) -> Result<DimensionalityReport> {
    require_symmetric_covariance(s, "dimensionality estimation")?;
    let p = s.rows();
    let eigenvalues = s.symmetric_eigen()?.values;

    let (estimated_factors, threshold_used) = match method {
        DimMethod::ReducedRank => {
            let shifted = s.sub(&Matrix::identity(p))?;
            let sigma = shifted.singular_values()?;
            if !(params.rank_rel_tol > 0.0 && params.rank_rel_tol.is_finite()) {
                return Err(Error::rejected(format!(
                    "rank tolerance must be a positive finite real, got {}",
                    params.rank_rel_tol
                )));
            }
            let threshold = params.rank_rel_tol * sigma[0];
            (sigma.iter().filter(|&&v| v > threshold).count(), threshold)
        }
        DimMethod::ParallelAnalysis => {
            let n = params.sample_size.ok_or_else(|| {
                Error::rejected(
                    "parallel analysis requires the sample size that produced the \
                     covariance (set sample_size)",
                )
            })?;
            let threshold = parallel_threshold(n, p, params)?;
            (
                eigenvalues.iter().filter(|&&v| v > threshold).count(),
                threshold,
            )
        }
        DimMethod::GapRatio => {
            if p < 2 {
                return Err(Error::rejected(
                    "gap-ratio needs at least two eigenvalues",
                ));
            }
            let max_k = params.max_k.unwrap_or(p - 1).min(p - 1);
            if max_k == 0 {
                return Err(Error::rejected("gap-ratio needs max_k >= 1"));
            }
            let mut best_k = 1usize;
            let mut best_ratio = f64::NEG_INFINITY;
            for k in 1..=max_k {
                let (top, next) = (eigenvalues[k - 1], eigenvalues[k]);
                // A vanishing denominator under a positive numerator is an
                // unbeatable gap; under a vanishing numerator it says
                // nothing.
                let ratio = if next > 0.0 {
                    top / next
                } else if top > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                };
                if ratio > best_ratio {
                    best_ratio = ratio;
                    best_k = k;
                }
            }
            (best_k, best_ratio)
        }
    };

    Ok(DimensionalityReport {
        eigenvalues,
        method,
        estimated_factors,
        threshold_used,
    })
}

/// The parallel-analysis threshold: the given percentile of the largest
/// eigenvalue of sample covariances of pure `Normal(0, I_p)` noise at
/// sample size `n`, over seeded Monte Carlo replicates.
pub fn parallel_threshold(n: usize, p: usize, params: &ExtractionParams) -> Result<f64> {
    if n < 2 {
        return Err(Error::rejected(
            "parallel analysis requires sample size >= 2",
        ));
    }
    if p == 0 {
        return Err(Error::rejected("parallel analysis requires p >= 1"));
    }
    if params.replicates == 0 {
        return Err(Error::rejected("parallel analysis requires replicates >= 1"));
    }
    if !(params.percentile > 0.0 && params.percentile <= 100.0) {
        return Err(Error::rejected(format!(
            "percentile must be in (0, 100], got {}",
            params.percentile
        )));
    }

    let mut largest: Vec<f64> = (0..params.replicates)
        .into_par_iter()
        .map(|replicate| noise_largest_eigenvalue(n, p, params.noise_seed, replicate as u64))
        .collect::<Result<_>>()?;
    largest.sort_by(f64::total_cmp);
    // Nearest-rank percentile on the sorted replicate list.
    let rank = ((params.percentile / 100.0) * params.replicates as f64).ceil() as usize;
    Ok(largest[rank.clamp(1, params.replicates) - 1])
}

/// Largest eigenvalue of one pure-noise sample covariance, drawn from the
/// replicate's own derived stream.
fn noise_largest_eigenvalue(n: usize, p: usize, seed: u64, replicate: u64) -> Result<f64> {
    let mut rng = derive_rng(seed, DOMAIN_NOISE, replicate);
    let mut mean = vec![0.0f64; p];
    let mut gram = vec![0.0f64; p * p];
    let mut row = vec![0.0f64; p];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..p {
            mean[i] += row[i];
            for j in i..p {
                gram[i * p + j] += row[i] * row[j];
            }
        }
    }
    let nf = n as f64;
    for m in &mut mean {
        *m /= nf;
    }
    let cov = Matrix::from_fn(p, p, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        (gram[a * p + b] - nf * mean[a] * mean[b]) / (nf - 1.0)
    })?;
    Ok(cov.symmetric_eigen()?.values[0])
}

/// Extracts `k` factors from the covariance `S`: the top-k eigenvectors of
/// `S - I`, each scaled by the square root of its eigenvalue (clipped at
/// zero, tolerating sampling noise that pushes trailing eigenvalues
/// negative). Sign convention: the largest-magnitude entry of every column
/// is positive.
pub fn extract_loadings(s: &Matrix, k: usize) -> Result<LoadingEstimate> {
    require_symmetric_covariance(s, "loading extraction")?;
    let p = s.rows();
    if k == 0 {
        return Err(Error::rejected("loading extraction requires k >= 1"));
    }
    if k > p {
        return Err(Error::rejected(format!(
            "cannot extract {k} factors from {p} items"
        )));
    }
    let shifted = s.sub(&Matrix::identity(p))?;
    let eig = shifted.symmetric_eigen()?;

    let mut loadings = Matrix::zeros(p, k);
    let mut variance_explained = Vec::with_capacity(k);
    for col in 0..k {
        let scale = eig.values[col].max(0.0).sqrt();
        let vector = eig.vector(col);
        // Flip so the largest-magnitude entry comes out positive.
        let dominant = vector
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let flip = if dominant < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            loadings.set(i, col, flip * scale * vector[i]);
        }
        variance_explained.push(eig.values[col].max(0.0));
    }
    Ok(LoadingEstimate {
        loadings,
        variance_explained,
    })
}

/// Max and mean absolute covariance over all pairs across two disjoint item
/// blocks.
pub fn cross_block_covariance(
    s: &Matrix,
    block_a: &[usize],
    block_b: &[usize],
) -> Result<CrossBlockSummary> {
    require_symmetric_covariance(s, "cross-block summary")?;
    if block_a.is_empty() || block_b.is_empty() {
        return Err(Error::rejected("cross-block summary requires nonempty blocks"));
    }
    let p = s.rows();
    for &i in block_a.iter().chain(block_b) {
        if i >= p {
            return Err(Error::rejected(format!(
                "block index {i} out of range for {p} items"
            )));
        }
    }
    if block_a.iter().any(|i| block_b.contains(i)) {
        return Err(Error::rejected("cross-block summary requires disjoint blocks"));
    }
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0f64;
    for &i in block_a {
        for &j in block_b {
            let v = s.get(i, j).abs();
            max_abs = max_abs.max(v);
            sum_abs += v;
        }
    }
    Ok(CrossBlockSummary {
        max_abs,
        mean_abs: sum_abs / (block_a.len() * block_b.len()) as f64,
    })
}

/// Renders an eigenvalue list as two-column CSV (`index,value`, 1-based
/// index) for scree plotting.
pub fn scree_csv(eigenvalues: &[f64]) -> String {
    let mut out = String::from("index,value\n");
    for (k, value) in eigenvalues.iter().enumerate() {
        out.push_str(&format!("{},{value}\n", k + 1));
    }
    out
}
