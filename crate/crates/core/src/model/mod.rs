//! Dynamic factor model: measurement structure, latent transition, noise
//! schedule, validation, and exact population covariances.
//!
//! The model observes `p` items driven by `m` latent factors. At wave `t`
//! the observation is `Y^t = Λ η^t + ε` with fresh standard-normal errors
//! per item, and the factors follow `η^t = B η^{t-1} + W^t` where the
//! innovation covariance shrinks geometrically: `Cov(W^t) = ρ^t Σw`. The
//! initial state is `η^0 ~ Normal(μ0, Σ0)`.
//!
//! [`ModelSpec`] is a plain data carrier: parsing is lenient about semantic
//! problems so that [`validate_spec`] can report them all by name instead of
//! dying on the first. Computations that need a sound spec (simulation,
//! covariances) reject unsound ones with the failed check's detail.

mod panel;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::equilibrium::{classify_convergence, ConvergenceStatus, DEFAULT_CONVERGENCE_TOL};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use panel::{read_panel_csv, simulate_panel, TrajectoryPanel};

/// Covariance matrices must be symmetric to within this entrywise tolerance.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Covariance matrices may have eigenvalues down to this floor; anything
/// lower is treated as genuinely indefinite rather than rounding.
pub const EIGENVALUE_FLOOR: f64 = -1e-10;
/// Default stop tolerance for the equilibrium iteration (Frobenius change
/// between successive latent covariances).
pub const DEFAULT_EQUILIBRIUM_TOL: f64 = 1e-9;
/// Default wave budget for the equilibrium iteration.
pub const DEFAULT_MAX_WAVES: usize = 100_000;

/// A block of item indices (0-based) that load on a common factor, plus an
/// optional human-readable label used in diagnostics.
///
/// JSON form is a plain array of indices, or `{"label": ..., "items":
/// [...]}` when a label is attached; both shapes are accepted on input and
/// a round trip preserves the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemBlock {
    pub label: Option<String>,
    pub items: Vec<usize>,
}

impl ItemBlock {
    pub fn plain(items: Vec<usize>) -> Self {
        ItemBlock { label: None, items }
    }

    pub fn labeled(label: impl Into<String>, items: Vec<usize>) -> Self {
        ItemBlock {
            label: Some(label.into()),
            items,
        }
    }

    /// The label if present, else a positional name like `block_3`.
    pub fn display_label(&self, position: usize) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("block_{position}"))
    }
}

impl Serialize for ItemBlock {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.label {
            None => self.items.serialize(serializer),
            Some(label) => {
                use serde::ser::SerializeStruct;
                let mut out = serializer.serialize_struct("ItemBlock", 2)?;
                out.serialize_field("label", label)?;
                out.serialize_field("items", &self.items)?;
                out.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for ItemBlock {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Plain(Vec<usize>),
            Labeled {
                #[serde(default)]
                label: Option<String>,
                items: Vec<usize>,
            },
        }
        Ok(match Repr::deserialize(deserializer)? {
            Repr::Plain(items) => ItemBlock { label: None, items },
            Repr::Labeled { label, items } => ItemBlock { label, items },
        })
    }
}

/// Complete description of a dynamic factor model.
///
/// JSON fields: `p`, `m`, `lambda` (p×m nested row arrays), `b` (m×m),
/// `mu0` (length m, default zeros), `sigma0` (m×m, default identity),
/// `sigma_w` (m×m, default identity), `rho`, optional `item_blocks`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    /// Number of observed items.
    pub p: usize,
    /// Number of latent factors.
    pub m: usize,
    /// Loadings: entry (i, j) is the weight of factor j on item i.
    pub lambda: Matrix,
    /// Transition: entry (i, j) is the effect of factor j at the previous
    /// wave on factor i at the current wave.
    pub b: Matrix,
    /// Mean of the initial latent state.
    pub mu0: Vec<f64>,
    /// Covariance of the initial latent state.
    pub sigma0: Matrix,
    /// Base innovation covariance; wave t uses `rho^t * sigma_w`.
    pub sigma_w: Matrix,
    /// Geometric decay rate of the innovation covariance, in (0, 1].
    pub rho: f64,
    /// Optional disjoint blocks of item indices for cross-block diagnostics.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub item_blocks: Vec<ItemBlock>,
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            p: usize,
            m: usize,
            lambda: Matrix,
            b: Matrix,
            #[serde(default)]
            mu0: Option<Vec<f64>>,
            #[serde(default)]
            sigma0: Option<Matrix>,
            #[serde(default)]
            sigma_w: Option<Matrix>,
            rho: f64,
            #[serde(default)]
            item_blocks: Vec<ItemBlock>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.p == 0 || raw.m == 0 {
            return Err(D::Error::custom("p and m must be positive"));
        }
        Ok(ModelSpec {
            p: raw.p,
            m: raw.m,
            lambda: raw.lambda,
            b: raw.b,
            mu0: raw.mu0.unwrap_or_else(|| vec![0.0; raw.m]),
            sigma0: raw.sigma0.unwrap_or_else(|| Matrix::identity(raw.m)),
            sigma_w: raw.sigma_w.unwrap_or_else(|| Matrix::identity(raw.m)),
            rho: raw.rho,
            item_blocks: raw.item_blocks,
        })
    }
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<ModelSpec> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("model spec: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(format!("model spec: {e}")))
    }

    /// The geometric innovation schedule `Cov(W^t) = rho^t * sigma_w`.
    pub fn noise_schedule(&self) -> NoiseSchedule {
        NoiseSchedule {
            rho: self.rho,
            base: self.sigma_w.clone(),
        }
    }

    /// Dimension consistency as a single description of everything wrong,
    /// or `Ok` when the pieces fit together.
    fn dim_problems(&self) -> std::result::Result<(), String> {
        let mut problems = Vec::new();
        if self.p == 0 || self.m == 0 {
            problems.push("p and m must be positive".to_string());
        }
        if self.lambda.rows() != self.p || self.lambda.cols() != self.m {
            problems.push(format!(
                "lambda is {}x{}, expected {}x{}",
                self.lambda.rows(),
                self.lambda.cols(),
                self.p,
                self.m
            ));
        }
        if self.b.rows() != self.m || self.b.cols() != self.m {
            problems.push(format!(
                "b is {}x{}, expected {}x{}",
                self.b.rows(),
                self.b.cols(),
                self.m,
                self.m
            ));
        }
        if self.mu0.len() != self.m {
            problems.push(format!("mu0 has length {}, expected {}", self.mu0.len(), self.m));
        }
        for (name, mat) in [("sigma0", &self.sigma0), ("sigma_w", &self.sigma_w)] {
            if mat.rows() != self.m || mat.cols() != self.m {
                problems.push(format!(
                    "{name} is {}x{}, expected {}x{}",
                    mat.rows(),
                    mat.cols(),
                    self.m,
                    self.m
                ));
            }
        }
        let mut seen = vec![false; self.p];
        for (k, block) in self.item_blocks.iter().enumerate() {
            for &item in &block.items {
                if item >= self.p {
                    problems.push(format!(
                        "item_blocks[{k}] refers to item {item}, but p = {}",
                        self.p
                    ));
                } else if seen[item] {
                    problems.push(format!("item {item} appears in more than one block"));
                } else {
                    seen[item] = true;
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }

    /// Symmetry/PSD problems of the covariance inputs, or `Ok`.
    fn psd_problems(&self) -> std::result::Result<(), String> {
        let mut problems = Vec::new();
        for (name, mat) in [("sigma0", &self.sigma0), ("sigma_w", &self.sigma_w)] {
            if !mat.is_square() {
                problems.push(format!("{name} is not square"));
                continue;
            }
            let asym = mat.asymmetry();
            if asym > SYMMETRY_TOL {
                problems.push(format!("{name} asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"));
            }
            match mat.symmetric_eigen() {
                Ok(eig) => {
                    let min = eig.values.last().copied().unwrap_or(0.0);
                    if min < EIGENVALUE_FLOOR {
                        problems.push(format!(
                            "{name} has eigenvalue {min:.3e} below {EIGENVALUE_FLOOR:.0e}"
                        ));
                    }
                }
                Err(e) => problems.push(format!("{name} eigenvalues failed: {e}")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }

    fn rho_problems(&self) -> std::result::Result<(), String> {
        if self.rho.is_finite() && self.rho > 0.0 && self.rho <= 1.0 {
            Ok(())
        } else {
            Err(format!("rho = {} is outside (0, 1]", self.rho))
        }
    }

    /// Rejects specs that cannot be simulated or propagated: inconsistent
    /// dimensions, non-PSD covariances, or an out-of-range decay rate.
    pub(crate) fn require_sound(&self) -> Result<()> {
        for gate in [
            Self::dim_problems as fn(&Self) -> std::result::Result<(), String>,
            Self::psd_problems,
            Self::rho_problems,
        ] {
            if let Err(problem) = gate(self) {
                return Err(Error::rejected(problem));
            }
        }
        Ok(())
    }
}

/// Innovation covariance schedule: weight `rho^t` applied to a base matrix.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    rho: f64,
    base: Matrix,
}

impl NoiseSchedule {
    /// Scalar weight `rho^t` at wave `t`.
    pub fn weight(&self, t: usize) -> f64 {
        self.rho.powi(t as i32)
    }

    /// Full innovation covariance `rho^t * sigma_w` at wave `t`.
    pub fn covariance(&self, t: usize) -> Matrix {
        self.base.scaled(self.weight(t))
    }
}

/// One named validation check with its outcome and measured quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_spec`]: every check is always present, pass or
/// fail, so callers can see the whole picture at once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks a spec against the model's assumptions and reports every result
/// by name; validation never aborts on the first failure.
///
/// Checks: `dims-consistent`, `psd-inputs`, `noise-decay-range`,
/// `b-invertible`, `decay-paper-sufficient` (`rho` below the squared
/// smallest eigenvalue modulus of `B`, the strong sufficient condition),
/// and `decay-iteration-sufficient` (`rho < 1` with convergent powers of
/// `B`, the weaker condition under which covariances settle).
pub fn validate_spec(spec: &ModelSpec, rel_tol: f64) -> ValidationReport {
    let mut checks = Vec::new();

    let dims = spec.dim_problems();
    checks.push(ValidationCheck {
        name: "dims-consistent".into(),
        passed: dims.is_ok(),
        detail: dims.clone().err().unwrap_or_else(|| {
            format!(
                "p = {}, m = {}, lambda {}x{}, b {}x{}",
                spec.p,
                spec.m,
                spec.lambda.rows(),
                spec.lambda.cols(),
                spec.b.rows(),
                spec.b.cols()
            )
        }),
    });

    let psd = spec.psd_problems();
    checks.push(ValidationCheck {
        name: "psd-inputs".into(),
        passed: psd.is_ok(),
        detail: psd.err().unwrap_or_else(|| {
            format!(
                "sigma0 asymmetry {:.3e}, sigma_w asymmetry {:.3e}",
                self_asym(&spec.sigma0),
                self_asym(&spec.sigma_w)
            )
        }),
    });

    let rho_range = spec.rho_problems();
    checks.push(ValidationCheck {
        name: "noise-decay-range".into(),
        passed: rho_range.is_ok(),
        detail: rho_range.err().unwrap_or_else(|| format!("rho = {}", spec.rho)),
    });

    // The remaining checks interrogate the transition matrix; they cannot
    // be evaluated when it is not even square.
    if !spec.b.is_square() || spec.b.rows() == 0 {
        let detail = "not evaluated: b is not a nonempty square matrix".to_string();
        for name in [
            "b-invertible",
            "decay-paper-sufficient",
            "decay-iteration-sufficient",
        ] {
            checks.push(ValidationCheck {
                name: name.into(),
                passed: false,
                detail: detail.clone(),
            });
        }
        return ValidationReport { checks };
    }

    let m = spec.b.rows();
    match spec.b.numeric_rank(rel_tol) {
        Ok(rank) => {
            let cond = spec
                .b
                .condition_estimate()
                .map(|c| format!("{c:.3e}"))
                .unwrap_or_else(|e| format!("unavailable: {e}"));
            checks.push(ValidationCheck {
                name: "b-invertible".into(),
                passed: rank == m,
                detail: format!("numeric rank {rank} of {m}, condition estimate {cond}"),
            });
        }
        Err(e) => checks.push(ValidationCheck {
            name: "b-invertible".into(),
            passed: false,
            detail: format!("rank computation failed: {e}"),
        }),
    }

    match spec.b.eigenvalues() {
        Ok(values) => {
            let min_modulus = values
                .iter()
                .map(|v| v.modulus())
                .fold(f64::INFINITY, f64::min);
            let bound = min_modulus * min_modulus;
            checks.push(ValidationCheck {
                name: "decay-paper-sufficient".into(),
                passed: spec.rho < bound,
                detail: format!(
                    "rho = {} vs squared smallest eigenvalue modulus {bound:.6}",
                    spec.rho
                ),
            });
        }
        Err(e) => checks.push(ValidationCheck {
            name: "decay-paper-sufficient".into(),
            passed: false,
            detail: format!("eigenvalues failed: {e}"),
        }),
    }

    match classify_convergence(&spec.b, DEFAULT_CONVERGENCE_TOL) {
        Ok(report) => {
            let convergent = report.status == ConvergenceStatus::Converges;
            checks.push(ValidationCheck {
                name: "decay-iteration-sufficient".into(),
                passed: spec.rho < 1.0 && convergent,
                detail: format!("rho = {}; powers of b: {}", spec.rho, report.reason),
            });
        }
        Err(e) => checks.push(ValidationCheck {
            name: "decay-iteration-sufficient".into(),
            passed: false,
            detail: format!("convergence classification failed: {e}"),
        }),
    }

    ValidationReport { checks }
}

fn self_asym(mat: &Matrix) -> f64 {
    if mat.is_square() {
        mat.asymmetry()
    } else {
        f64::NAN
    }
}

/// One propagation step of the latent covariance:
/// `Sigma_t = B Sigma_{t-1} B' + weight * sigma_w`, symmetrized to stop
/// rounding drift from accumulating.
fn propagate(cov: &Matrix, b: &Matrix, sigma_w: &Matrix, weight: f64) -> Result<Matrix> {
    Ok(b.matmul(cov)?
        .matmul(&b.transpose())?
        .add(&sigma_w.scaled(weight))?
        .symmetrized())
}

/// Exact covariance of the latent state at wave `t`, by forward recursion
/// from `sigma0`.
pub fn latent_covariance(spec: &ModelSpec, t: usize) -> Result<Matrix> {
    spec.require_sound()?;
    let schedule = spec.noise_schedule();
    let mut cov = spec.sigma0.symmetrized();
    for k in 1..=t {
        cov = propagate(&cov, &spec.b, &spec.sigma_w, schedule.weight(k))?;
    }
    Ok(cov)
}

/// Exact covariance of the observed items at wave `t`:
/// `Lambda Cov(eta^t) Lambda' + I_p`.
pub fn population_covariance(spec: &ModelSpec, t: usize) -> Result<Matrix> {
    let latent = latent_covariance(spec, t)?;
    observed_from_latent(spec, &latent)
}

/// Maps a latent covariance through the measurement model.
fn observed_from_latent(spec: &ModelSpec, latent: &Matrix) -> Result<Matrix> {
    Ok(spec
        .lambda
        .matmul(latent)?
        .matmul(&spec.lambda.transpose())?
        .add(&Matrix::identity(spec.p))?
        .symmetrized())
}

/// The settled covariance structure: latent and observed equilibrium
/// covariances plus the wave count the iteration needed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumCovariance {
    /// Latent covariance the recursion settled on.
    pub latent: Matrix,
    /// Observed covariance `Lambda latent Lambda' + I_p`.
    pub covariance: Matrix,
    /// Number of waves until successive changes fell below tolerance.
    pub waves: usize,
}

/// Iterates the latent covariance recursion until the Frobenius change
/// between successive waves falls below `abs_tol`, then maps the result
/// through the measurement model.
///
/// Requires convergent powers of `B` and `rho < 1`; other specs are
/// rejected up front since their covariances cannot settle. Exhausting
/// `max_waves` is a no-equilibrium error carrying the last change.
pub fn equilibrium_covariance(
    spec: &ModelSpec,
    abs_tol: f64,
    max_waves: usize,
) -> Result<EquilibriumCovariance> {
    spec.require_sound()?;
    if !(abs_tol > 0.0 && abs_tol.is_finite()) {
        return Err(Error::rejected(format!(
            "equilibrium tolerance must be a positive finite real, got {abs_tol}"
        )));
    }
    if max_waves == 0 {
        return Err(Error::rejected("max_waves must be positive"));
    }
    let classification = classify_convergence(&spec.b, DEFAULT_CONVERGENCE_TOL)?;
    if classification.status != ConvergenceStatus::Converges {
        return Err(Error::rejected(format!(
            "equilibrium requires convergent powers of b: {}",
            classification.reason
        )));
    }
    if spec.rho >= 1.0 {
        return Err(Error::rejected(format!(
            "equilibrium requires rho < 1, got {}",
            spec.rho
        )));
    }

    let schedule = spec.noise_schedule();
    let mut cov = spec.sigma0.symmetrized();
    let mut last_change = f64::INFINITY;
    for wave in 1..=max_waves {
        let next = propagate(&cov, &spec.b, &spec.sigma_w, schedule.weight(wave))?;
        last_change = next.sub(&cov)?.frobenius_norm();
        cov = next;
        if last_change < abs_tol {
            // When every eigenvalue of B sits strictly inside the unit
            // circle, the settled latent covariance is exactly zero; the
            // iteration has verified convergence, so return the exact
            // value rather than its sub-tolerance residue.
            if classification.asymptotic_rank == Some(0) {
                cov = Matrix::zeros(spec.m, spec.m);
            }
            let covariance = observed_from_latent(spec, &cov)?;
            return Ok(EquilibriumCovariance {
                latent: cov,
                covariance,
                waves: wave,
            });
        }
    }
    Err(Error::NoEquilibrium {
        max_waves,
        last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn two_factor_spec() -> ModelSpec {
        ModelSpec {
            p: 4,
            m: 2,
            lambda: mat(&[&[0.8, 0.0], &[0.8, 0.0], &[0.0, 0.8], &[0.0, 0.8]]),
            b: mat(&[&[0.7, 0.3], &[0.2, 0.8]]),
            mu0: vec![0.0, 0.0],
            sigma0: Matrix::identity(2),
            sigma_w: Matrix::identity(2),
            rho: 0.2,
            item_blocks: vec![ItemBlock::plain(vec![0, 1]), ItemBlock::plain(vec![2, 3])],
        }
    }

    fn assert_matrix_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        let diff = a.sub(b).unwrap().max_abs();
        assert!(diff <= tol, "matrices differ by {diff}, tolerance {tol}");
    }

    #[test]
    fn json_round_trip_preserves_spec() {
        let spec = two_factor_spec();
        let text = spec.to_json().unwrap();
        let back = ModelSpec::from_json(&text).unwrap();
        assert_eq!(back.p, spec.p);
        assert_eq!(back.m, spec.m);
        assert_matrix_close(&back.lambda, &spec.lambda, 0.0);
        assert_matrix_close(&back.b, &spec.b, 0.0);
        assert_eq!(back.mu0, spec.mu0);
        assert_eq!(back.rho, spec.rho);
        assert_eq!(back.item_blocks, spec.item_blocks);
    }

    #[test]
    fn omitted_fields_get_documented_defaults() {
        let text = r#"{
            "p": 2, "m": 2,
            "lambda": [[1.0, 0.0], [0.0, 1.0]],
            "b": [[0.5, 0.0], [0.0, 0.5]],
            "rho": 0.5
        }"#;
        let spec = ModelSpec::from_json(text).unwrap();
        assert_eq!(spec.mu0, vec![0.0, 0.0]);
        assert_matrix_close(&spec.sigma0, &Matrix::identity(2), 0.0);
        assert_matrix_close(&spec.sigma_w, &Matrix::identity(2), 0.0);
        assert!(spec.item_blocks.is_empty());
    }

    #[test]
    fn item_blocks_accept_plain_and_labeled_forms() {
        let text = r#"{
            "p": 4, "m": 2,
            "lambda": [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]],
            "b": [[0.5, 0.0], [0.0, 0.5]],
            "rho": 0.5,
            "item_blocks": [[0, 1], {"label": "mood", "items": [2, 3]}]
        }"#;
        let spec = ModelSpec::from_json(text).unwrap();
        assert_eq!(spec.item_blocks[0], ItemBlock::plain(vec![0, 1]));
        assert_eq!(spec.item_blocks[1], ItemBlock::labeled("mood", vec![2, 3]));
        // A round trip keeps plain blocks plain and labeled blocks labeled.
        let back = ModelSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back.item_blocks, spec.item_blocks);
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(matches!(
            ModelSpec::from_json("{\"p\": 2}"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            ModelSpec::from_json("not json at all"),
            Err(Error::Parse(_))
        ));
        // Unknown fields are rejected, not silently ignored.
        let text = r#"{
            "p": 1, "m": 1, "lambda": [[1.0]], "b": [[0.5]],
            "rho": 0.5, "extra": 7
        }"#;
        assert!(matches!(ModelSpec::from_json(text), Err(Error::Parse(_))));
    }

    #[test]
    fn validation_passes_a_sound_spec() {
        let report = validate_spec(&two_factor_spec(), 1e-8);
        assert!(report.all_passed(), "{report:?}");
        assert_eq!(report.checks.len(), 6);
        // rho = 0.2 sits below the squared smallest eigenvalue modulus
        // 0.25 of this transition, so the strong condition holds too.
        assert!(report.check("decay-paper-sufficient").unwrap().passed);
    }

    #[test]
    fn validation_identity_transition_passes_all_checks() {
        let mut spec = two_factor_spec();
        spec.b = Matrix::identity(2);
        spec.rho = 0.5;
        let report = validate_spec(&spec, 1e-8);
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn validation_flags_singular_transition_by_name() {
        let mut spec = two_factor_spec();
        spec.b = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        spec.rho = 0.2;
        let report = validate_spec(&spec, 1e-8);
        assert!(!report.check("b-invertible").unwrap().passed);
        // Smallest eigenvalue modulus is 0, so the strong decay condition
        // cannot hold...
        assert!(!report.check("decay-paper-sufficient").unwrap().passed);
        // ...yet powers of this matrix converge (eigenvalues 1 and 0), so
        // the weaker condition still does.
        assert!(report.check("decay-iteration-sufficient").unwrap().passed);
        assert!(report.check("dims-consistent").unwrap().passed);
    }

    #[test]
    fn validation_reports_dimension_and_psd_problems_without_aborting() {
        let spec = ModelSpec {
            p: 3,
            m: 2,
            lambda: Matrix::identity(2), // wrong shape: should be 3x2
            b: mat(&[&[0.5, 0.0], &[0.0, 0.5]]),
            mu0: vec![0.0],                                    // wrong length
            sigma0: mat(&[&[1.0, 0.9], &[0.9, -1.0]]),         // indefinite
            sigma_w: mat(&[&[1.0, 2e-12], &[0.0, 1.0]]),       // asymmetric
            rho: 1.5,                                          // out of range
            item_blocks: vec![ItemBlock::plain(vec![0, 7])],   // 7 out of range
        };
        let report = validate_spec(&spec, 1e-8);
        assert!(!report.check("dims-consistent").unwrap().passed);
        assert!(!report.check("psd-inputs").unwrap().passed);
        assert!(!report.check("noise-decay-range").unwrap().passed);
        let dims = &report.check("dims-consistent").unwrap().detail;
        assert!(dims.contains("lambda"), "{dims}");
        assert!(dims.contains("mu0"), "{dims}");
        assert!(dims.contains("item 7"), "{dims}");
        // All six checks are present even though several failed.
        assert_eq!(report.checks.len(), 6);
    }

    #[test]
    fn latent_covariance_base_case_is_sigma0() {
        let mut spec = two_factor_spec();
        spec.sigma0 = mat(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let cov = latent_covariance(&spec, 0).unwrap();
        assert_matrix_close(&cov, &spec.sigma0, 0.0);
    }

    #[test]
    fn zero_transition_erases_history() {
        let mut spec = two_factor_spec();
        spec.b = Matrix::zeros(2, 2);
        spec.sigma_w = mat(&[&[1.0, 0.25], &[0.25, 2.0]]);
        spec.rho = 0.2;
        let cov = latent_covariance(&spec, 3).unwrap();
        let expected = spec.sigma_w.scaled(0.2f64.powi(3));
        assert_matrix_close(&cov, &expected, 1e-15);
    }

    #[test]
    fn latent_covariance_matches_termwise_expansion() {
        // Sigma_2 = B^2 Sigma0 (B^2)' + rho * B Sigma_w B' + rho^2 * Sigma_w.
        let spec = two_factor_spec();
        let b2 = spec.b.pow(2).unwrap();
        let expected = b2
            .matmul(&spec.sigma0)
            .unwrap()
            .matmul(&b2.transpose())
            .unwrap()
            .add(
                &spec
                    .b
                    .matmul(&spec.sigma_w)
                    .unwrap()
                    .matmul(&spec.b.transpose())
                    .unwrap()
                    .scaled(spec.rho),
            )
            .unwrap()
            .add(&spec.sigma_w.scaled(spec.rho * spec.rho))
            .unwrap();
        let cov = latent_covariance(&spec, 2).unwrap();
        assert_matrix_close(&cov, &expected, 1e-14);
    }

    #[test]
    fn zero_loadings_give_identity_observed_covariance() {
        let mut spec = two_factor_spec();
        spec.lambda = Matrix::zeros(4, 2);
        for t in [0, 1, 5] {
            let cov = population_covariance(&spec, t).unwrap();
            assert_matrix_close(&cov, &Matrix::identity(4), 0.0);
        }
    }

    #[test]
    fn single_factor_unit_loadings_fill_off_diagonals() {
        let spec = ModelSpec {
            p: 3,
            m: 1,
            lambda: mat(&[&[1.0], &[1.0], &[1.0]]),
            b: mat(&[&[0.5]]),
            mu0: vec![0.0],
            sigma0: mat(&[&[2.0]]),
            sigma_w: mat(&[&[1.0]]),
            rho: 0.5,
            item_blocks: vec![],
        };
        let t = 1;
        let c = latent_covariance(&spec, t).unwrap().get(0, 0);
        let cov = population_covariance(&spec, t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 + c } else { c };
                assert!((cov.get(i, j) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn latent_covariance_stays_psd_over_time() {
        let mut rng = StdRng::seed_from_u64(820);
        for _ in 0..20 {
            let m = rng.gen_range(1..=4);
            // Random PSD inputs via A A' and a contractive-ish transition.
            let a0 = Matrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            let aw = Matrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            let spec = ModelSpec {
                p: m,
                m,
                lambda: Matrix::identity(m),
                b: Matrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0))
                    .unwrap()
                    .scaled(1.0 / m as f64),
                mu0: vec![0.0; m],
                sigma0: a0.matmul(&a0.transpose()).unwrap().symmetrized(),
                sigma_w: aw.matmul(&aw.transpose()).unwrap().symmetrized(),
                rho: rng.gen_range(0.1..1.0),
                item_blocks: vec![],
            };
            for t in [0, 1, 3, 10] {
                let cov = latent_covariance(&spec, t).unwrap();
                assert!(cov.asymmetry() <= 1e-12);
                let min = cov.symmetric_eigen().unwrap().values.last().copied().unwrap();
                assert!(min >= -1e-10, "t={t}: min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn observed_minus_identity_has_rank_at_most_m() {
        let mut rng = StdRng::seed_from_u64(821);
        for _ in 0..10 {
            let m = rng.gen_range(1..=3);
            let p = rng.gen_range(m..=6);
            let spec = ModelSpec {
                p,
                m,
                lambda: Matrix::from_fn(p, m, |_, _| rng.gen_range(-1.0..1.0)).unwrap(),
                b: Matrix::from_fn(m, m, |_, _| rng.gen_range(-0.6..0.6)).unwrap(),
                mu0: vec![0.0; m],
                sigma0: Matrix::identity(m),
                sigma_w: Matrix::identity(m),
                rho: rng.gen_range(0.1..1.0),
                item_blocks: vec![],
            };
            for t in [0, 2, 7] {
                let cov = population_covariance(&spec, t).unwrap();
                let shifted = cov.sub(&Matrix::identity(p)).unwrap();
                assert!(shifted.numeric_rank(1e-8).unwrap() <= m);
            }
        }
    }

    #[test]
    fn equilibrium_decaying_transition_returns_identity_observed() {
        let mut spec = two_factor_spec();
        spec.b = Matrix::identity(2).scaled(0.5);
        spec.sigma_w = Matrix::identity(2);
        spec.rho = 0.5;
        let eq = equilibrium_covariance(&spec, 1e-12, 10_000).unwrap();
        // All variance decays, and the exact zero is returned, not residue.
        assert_eq!(eq.latent.max_abs(), 0.0);
        assert_matrix_close(&eq.covariance, &Matrix::identity(4), 0.0);
        let shifted = eq.covariance.sub(&Matrix::identity(4)).unwrap();
        assert_eq!(shifted.numeric_rank(1e-6).unwrap(), 0);
    }

    #[test]
    fn equilibrium_identity_transition_matches_geometric_series() {
        // With B = I the recursion adds rho^k Sigma_w each wave, so the
        // latent covariance settles at Sigma0 + (rho/(1-rho)) Sigma_w.
        let mut spec = two_factor_spec();
        spec.b = Matrix::identity(2);
        spec.sigma_w = mat(&[&[1.0, 0.2], &[0.2, 0.5]]);
        spec.rho = 0.5;
        let eq = equilibrium_covariance(&spec, 1e-10, 10_000).unwrap();
        let expected = spec
            .sigma0
            .add(&spec.sigma_w.scaled(0.5 / (1.0 - 0.5)))
            .unwrap();
        assert_matrix_close(&eq.latent, &expected, 1e-9);
        assert!(eq.waves > 10 && eq.waves < 100, "waves = {}", eq.waves);
    }

    #[test]
    fn equilibrium_rejects_divergent_or_undamped_specs() {
        let mut spec = two_factor_spec();
        spec.b = Matrix::identity(2).scaled(1.5);
        assert!(matches!(
            equilibrium_covariance(&spec, 1e-9, 1000),
            Err(Error::Rejected(_))
        ));
        let mut spec = two_factor_spec();
        spec.rho = 1.0;
        assert!(matches!(
            equilibrium_covariance(&spec, 1e-9, 1000),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn equilibrium_budget_exhaustion_reports_last_change() {
        let mut spec = two_factor_spec();
        spec.b = Matrix::identity(2);
        spec.rho = 0.999;
        match equilibrium_covariance(&spec, 1e-12, 10) {
            Err(Error::NoEquilibrium {
                max_waves,
                last_change,
            }) => {
                assert_eq!(max_waves, 10);
                assert!(last_change > 1e-12);
            }
            other => panic!("expected no-equilibrium, got {other:?}"),
        }
    }

    #[test]
    fn independent_factors_leave_cross_block_covariance_exactly_zero() {
        // Diagonal transition and diagonal noise keep the factors
        // independent, and block loadings route each factor to its own
        // items, so cross-block entries are exact zeros (not just small).
        let spec = ModelSpec {
            p: 4,
            m: 2,
            lambda: mat(&[&[0.9, 0.0], &[0.7, 0.0], &[0.0, 0.6], &[0.0, 0.8]]),
            b: Matrix::from_diagonal(&[0.8, 0.5]).unwrap(),
            mu0: vec![0.0, 0.0],
            sigma0: Matrix::from_diagonal(&[1.0, 2.0]).unwrap(),
            sigma_w: Matrix::from_diagonal(&[0.5, 0.25]).unwrap(),
            rho: 0.5,
            item_blocks: vec![ItemBlock::plain(vec![0, 1]), ItemBlock::plain(vec![2, 3])],
        };
        for t in [0, 1, 4, 16] {
            let cov = population_covariance(&spec, t).unwrap();
            for i in 0..2 {
                for j in 2..4 {
                    assert_eq!(cov.get(i, j), 0.0, "t={t}, entry ({i},{j})");
                    assert_eq!(cov.get(j, i), 0.0);
                }
            }
        }
    }

    #[test]
    fn computations_reject_inconsistent_dimensions() {
        let mut spec = two_factor_spec();
        spec.lambda = Matrix::identity(3);
        assert!(matches!(
            latent_covariance(&spec, 1),
            Err(Error::Rejected(_))
        ));
        assert!(matches!(
            population_covariance(&spec, 1),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn noise_schedule_weights_are_geometric() {
        let spec = two_factor_spec();
        let schedule = spec.noise_schedule();
        assert_eq!(schedule.weight(0), 1.0);
        assert_eq!(schedule.weight(1), 0.2);
        assert!((schedule.weight(3) - 0.008).abs() < 1e-15);
        let cov = schedule.covariance(2);
        assert_matrix_close(&cov, &Matrix::identity(2).scaled(0.04), 1e-15);
    }
}
