//! Seeded, runnable experiments: track apparent dimensionality across
//! waves, compare against the transition matrix's asymptotic rank, and emit
//! JSON/CSV reports.
//!
//! An experiment follows one scenario: at every scheduled wave it computes
//! the exact population covariance and its reduced-rank dimensionality,
//! plus sample estimates (all three methods) from one simulated panel. The
//! convergence classification and coupling-class partition of the
//! transition matrix ride along, and the verdict states whether the final
//! scheduled wave has reached the asymptotic rank.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    block_decompose, classify_convergence, equivalence_classes, ClassReport, ConvergenceReport,
    ConvergenceStatus, EquivalencePartition, DEFAULT_CONVERGENCE_TOL, DEFAULT_ZERO_TOL,
};
use crate::error::{Error, Result};
use crate::extraction::{
    cross_block_covariance, estimate_dimensionality, sample_covariance, CrossBlockSummary,
    DimMethod, ExtractionParams,
};
use crate::linalg::Matrix;
use crate::model::{
    population_covariance, simulate_panel, validate_spec, ItemBlock, ModelSpec, ValidationReport,
    DEFAULT_EQUILIBRIUM_TOL, DEFAULT_MAX_WAVES,
};
use crate::rng::{derive_rng, derive_seed, DOMAIN_EXPERIMENT, DOMAIN_SCENARIO};

/// Every tolerance an experiment consumes, with serde defaults so configs
/// can set only what they care about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Relative singular-value cut for reduced-rank dimensionality.
    pub rank_rel_tol: f64,
    /// Eigenvalue resolution for convergence classification.
    pub convergence_tol: f64,
    /// Entries of `B` at or below this magnitude count as structural zeros
    /// when building coupling classes.
    pub zero_tol: f64,
    /// Frobenius stop tolerance for equilibrium iteration.
    pub equilibrium_tol: f64,
    /// Wave budget for equilibrium iteration.
    pub max_equilibrium_waves: usize,
    /// Parallel-analysis Monte Carlo replicates.
    pub replicates: usize,
    /// Parallel-analysis percentile in (0, 100].
    pub percentile: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            rank_rel_tol: 1e-6,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            zero_tol: DEFAULT_ZERO_TOL,
            equilibrium_tol: DEFAULT_EQUILIBRIUM_TOL,
            max_equilibrium_waves: DEFAULT_MAX_WAVES,
            replicates: 200,
            percentile: 95.0,
        }
    }
}

/// A fully specified experiment: which model, which waves to inspect, how
/// many subjects to simulate, and under which seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub spec: ModelSpec,
    /// Waves at which to record dimensionality; nonempty, strictly
    /// increasing.
    pub wave_schedule: Vec<usize>,
    pub n_subjects: usize,
    pub seed: u64,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("scenario config: {e}")))
    }

    fn require_valid(&self) -> Result<()> {
        if self.wave_schedule.is_empty() {
            return Err(Error::rejected("wave_schedule must be nonempty"));
        }
        if self.wave_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::rejected(format!(
                "wave_schedule must be strictly increasing, got {:?}",
                self.wave_schedule
            )));
        }
        if self.n_subjects < 2 {
            return Err(Error::rejected(
                "n_subjects must be at least 2 (sample covariances need two subjects)",
            ));
        }
        self.spec.require_sound()
    }

    /// Parameters handed to the dimensionality estimators: the panel's
    /// sample size, the config's thresholds, and a noise seed derived from
    /// the experiment seed (so the benchmark is reproducible but
    /// independent of the panel draws).
    fn extraction_params(&self) -> ExtractionParams {
        ExtractionParams {
            rank_rel_tol: self.thresholds.rank_rel_tol,
            sample_size: Some(self.n_subjects),
            replicates: self.thresholds.replicates,
            percentile: self.thresholds.percentile,
            noise_seed: derive_seed(self.seed, DOMAIN_EXPERIMENT, 0),
            max_k: None,
        }
    }
}

/// Everything measured at one scheduled wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRecord {
    pub wave: usize,
    /// Reduced-rank dimensionality of the exact population covariance.
    pub population_rank: usize,
    /// Reduced-rank estimate on the sample covariance.
    pub est_reduced: usize,
    /// Parallel-analysis estimate on the sample covariance.
    pub est_parallel: usize,
    /// Gap-ratio estimate on the sample covariance.
    pub est_gap: usize,
    /// Two largest eigenvalues of population covariance minus identity.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Absolute population covariance across distinct item blocks; absent
    /// when the model defines fewer than two item blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_block: Option<CrossBlockSummary>,
}

/// Full outcome of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ScenarioConfig,
    pub validation: ValidationReport,
    pub convergence: ConvergenceReport,
    pub partition: EquivalencePartition,
    pub classes: Vec<ClassReport>,
    pub waves: Vec<WaveRecord>,
    /// First scheduled wave whose population rank equals the asymptotic
    /// rank; absent when that never happens (or no asymptotic rank exists).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapse_wave: Option<usize>,
    pub verdict: String,
}

/// Runs one scenario end to end.
///
/// The population path (covariances, ranks, eigenvalues) is deterministic;
/// the sample path simulates a single panel under the config seed and
/// estimates dimensionality at every scheduled wave with all three methods.
/// A transition matrix whose powers diverge does not abort the run — the
/// per-wave records are still produced and the verdict reports the
/// non-convergence.
pub fn run_collapse_experiment(config: &ScenarioConfig) -> Result<ExperimentReport> {
    config.require_valid()?;
    let spec = &config.spec;
    let thresholds = &config.thresholds;

    let validation = validate_spec(spec, thresholds.rank_rel_tol);
    let convergence = classify_convergence(&spec.b, thresholds.convergence_tol)?;
    let partition = equivalence_classes(&spec.b, thresholds.zero_tol)?;
    let classes = block_decompose(
        &spec.b,
        &partition,
        thresholds.convergence_tol,
        thresholds.zero_tol,
    )?;

    let n_waves = config.wave_schedule.last().unwrap() + 1;
    let panel = simulate_panel(spec, n_waves, config.n_subjects, config.seed)?;
    let params = config.extraction_params();

    let blocks: Vec<&[usize]> = spec
        .item_blocks
        .iter()
        .map(|b| b.items.as_slice())
        .collect();

    let mut waves = Vec::with_capacity(config.wave_schedule.len());
    for &wave in &config.wave_schedule {
        let population = population_covariance(spec, wave)?;
        let population_rank =
            estimate_dimensionality(&population, DimMethod::ReducedRank, &params)?
                .estimated_factors;
        let shifted_values = population
            .sub(&Matrix::identity(spec.p))?
            .symmetric_eigen()?
            .values;
        let lambda1 = shifted_values.first().copied().unwrap_or(0.0);
        let lambda2 = shifted_values.get(1).copied().unwrap_or(0.0);

        let sample = sample_covariance(&panel, wave)?;
        let est_reduced =
            estimate_dimensionality(&sample, DimMethod::ReducedRank, &params)?.estimated_factors;
        let est_parallel = estimate_dimensionality(&sample, DimMethod::ParallelAnalysis, &params)?
            .estimated_factors;
        let est_gap =
            estimate_dimensionality(&sample, DimMethod::GapRatio, &params)?.estimated_factors;

        let cross_block = cross_block_summary(&population, &blocks)?;

        waves.push(WaveRecord {
            wave,
            population_rank,
            est_reduced,
            est_parallel,
            est_gap,
            lambda1,
            lambda2,
            cross_block,
        });
    }

    let (collapse_wave, verdict) = judge(&convergence, &waves);
    Ok(ExperimentReport {
        config: config.clone(),
        validation,
        convergence,
        partition,
        classes,
        waves,
        collapse_wave,
        verdict,
    })
}

/// Pools the population covariance across every pair of distinct item
/// blocks: max over all cross pairs, mean over all cross entries.
fn cross_block_summary(
    population: &Matrix,
    blocks: &[&[usize]],
) -> Result<Option<CrossBlockSummary>> {
    if blocks.len() < 2 {
        return Ok(None);
    }
    let mut max_abs = 0.0f64;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[i + 1..] {
            let pair = cross_block_covariance(population, a, b)?;
            max_abs = max_abs.max(pair.max_abs);
            let pairs = a.len() * b.len();
            sum += pair.mean_abs * pairs as f64;
            count += pairs;
        }
    }
    Ok(Some(CrossBlockSummary {
        max_abs,
        mean_abs: sum / count as f64,
    }))
}

/// Forms the verdict: does the final scheduled wave sit at the asymptotic
/// rank, and when was that rank first reached?
fn judge(
    convergence: &ConvergenceReport,
    waves: &[WaveRecord],
) -> (Option<usize>, String) {
    let final_record = waves.last().expect("schedule is nonempty");
    match (convergence.status, convergence.asymptotic_rank) {
        (ConvergenceStatus::Converges, Some(rank)) => {
            let collapse_wave = waves
                .iter()
                .find(|r| r.population_rank == rank)
                .map(|r| r.wave);
            let verdict = if final_record.population_rank == rank {
                match collapse_wave {
                    Some(wave) => format!(
                        "collapse confirmed: population dimensionality reached the \
                         asymptotic rank {rank} at wave {wave} and held it through \
                         wave {}",
                        final_record.wave
                    ),
                    None => unreachable!("final wave matched the rank"),
                }
            } else {
                format!(
                    "not collapsed yet: population dimensionality is {} at wave {}, \
                     asymptotic rank is {rank}; extend the schedule to see the limit",
                    final_record.population_rank, final_record.wave
                )
            };
            (collapse_wave, verdict)
        }
        _ => {
            let verdict = format!(
                "no asymptotic rank: powers of the transition matrix do not \
                 converge ({}); per-wave population ranks are reported as measured",
                convergence.reason
            );
            (None, verdict)
        }
    }
}

/// Output format for [`write_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::rejected(format!(
                "unknown report format {other:?}; expected json or csv"
            ))),
        }
    }
}

/// The canonical report file name: `<scenario>_<seed>.<ext>`.
pub fn report_file_name(config: &ScenarioConfig, format: ReportFormat) -> String {
    format!("{}_{}.{}", config.name, config.seed, format.extension())
}

/// Renders the per-wave records as CSV with one flat row per wave.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "wave,population_rank,est_reduced,est_parallel,est_gap,lambda1,lambda2,cross_block_max\n",
    );
    for record in &report.waves {
        let cross = record
            .cross_block
            .map(|c| c.max_abs.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            record.wave,
            record.population_rank,
            record.est_reduced,
            record.est_parallel,
            record.est_gap,
            record.lambda1,
            record.lambda2,
            cross
        ));
    }
    out
}

/// Writes the report into `dir` under the canonical name, returning the
/// path. The whole file is rendered before anything touches the
/// filesystem, so failures never leave partial output.
pub fn write_report(
    report: &ExperimentReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<PathBuf> {
    let rendered = match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)
                .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
            text.push('\n');
            text
        }
        ReportFormat::Csv => report_csv(report),
    };
    let path = dir.join(report_file_name(&report.config, format));
    std::fs::write(&path, rendered).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// The built-in scenario names, in presentation order.
pub const BUILTIN_SCENARIOS: [&str; 5] = [
    "figure1",
    "identity",
    "positive-block",
    "mixed-sign",
    "anxiety-depression",
];

/// Returns a fully populated built-in scenario.
///
/// All built-ins observe waves 1, 2, 5, 10, 20, 40 with 5000 subjects under
/// seed 42, loadings of 0.8 routing disjoint item blocks to their factors,
/// unit initial/innovation covariances, and decay rate 0.2.
///
/// - `figure1`: two factors coupled by `B = [[0.7, 0.3], [0.2, 0.8]]`,
///   twelve items. The canonical collapse demonstration.
/// - `identity`: same measurement structure, `B = I` (no causal effects);
///   the control where nothing collapses.
/// - `positive-block`: three factors, strictly positive seeded random `B`
///   scaled to spectral radius 1.
/// - `mixed-sign`: three factors, `B = I - J/6` (negative off-diagonals),
///   the caveat case keeping two dimensions in one coupling class.
/// - `anxiety-depression`: `figure1` with its item blocks labeled, as a
///   synthetic two-construct narrative.
pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig> {
    let config = match name {
        "figure1" => two_factor_config(
            "figure1",
            Matrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]])?,
            None,
        ),
        "identity" => two_factor_config("identity", Matrix::identity(2), None),
        "anxiety-depression" => two_factor_config(
            "anxiety-depression",
            Matrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]])?,
            Some(("anxiety", "depression")),
        ),
        "mixed-sign" => {
            let b = Matrix::from_fn(3, 3, |i, j| {
                if i == j {
                    1.0 - 1.0 / 6.0
                } else {
                    -1.0 / 6.0
                }
            })?;
            three_factor_config("mixed-sign", b)
        }
        "positive-block" => {
            let b = positive_unit_radius_transition()?;
            three_factor_config("positive-block", b)
        }
        other => {
            return Err(Error::rejected(format!(
                "unknown scenario {other:?}; available: {}",
                BUILTIN_SCENARIOS.join(", ")
            )))
        }
    };
    Ok(config)
}

/// Strictly positive 3x3 matrix with spectral radius 1: seeded uniform
/// entries in [0.2, 1.0), divided by their spectral radius.
fn positive_unit_radius_transition() -> Result<Matrix> {
    use rand::Rng;
    let mut rng = derive_rng(42, DOMAIN_SCENARIO, 0);
    let raw = Matrix::from_fn(3, 3, |_, _| rng.gen_range(0.2..1.0))?;
    let radius = raw.eigenvalues()?[0].modulus();
    Ok(raw.scaled(1.0 / radius))
}

fn two_factor_config(
    name: &str,
    b: Matrix,
    labels: Option<(&str, &str)>,
) -> ScenarioConfig {
    let p = 12;
    let lambda = Matrix::from_fn(p, 2, |i, j| {
        if (i < 6 && j == 0) || (i >= 6 && j == 1) {
            0.8
        } else {
            0.0
        }
    })
    .expect("static dimensions");
    let (first, second): (Vec<usize>, Vec<usize>) = ((0..6).collect(), (6..12).collect());
    let item_blocks = match labels {
        Some((a, b)) => vec![ItemBlock::labeled(a, first), ItemBlock::labeled(b, second)],
        None => vec![ItemBlock::plain(first), ItemBlock::plain(second)],
    };
    ScenarioConfig {
        name: name.to_string(),
        spec: ModelSpec {
            p,
            m: 2,
            lambda,
            b,
            mu0: vec![0.0; 2],
            sigma0: Matrix::identity(2),
            sigma_w: Matrix::identity(2),
            rho: 0.2,
            item_blocks,
        },
        wave_schedule: vec![1, 2, 5, 10, 20, 40],
        n_subjects: 5000,
        seed: 42,
        thresholds: Thresholds::default(),
    }
}

fn three_factor_config(name: &str, b: Matrix) -> ScenarioConfig {
    let p = 12;
    let lambda = Matrix::from_fn(p, 3, |i, j| if i / 4 == j { 0.8 } else { 0.0 })
        .expect("static dimensions");
    let item_blocks = (0..3)
        .map(|k| ItemBlock::plain((4 * k..4 * (k + 1)).collect()))
        .collect();
    ScenarioConfig {
        name: name.to_string(),
        spec: ModelSpec {
            p,
            m: 3,
            lambda,
            b,
            mu0: vec![0.0; 3],
            sigma0: Matrix::identity(3),
            sigma_w: Matrix::identity(3),
            rho: 0.2,
            item_blocks,
        },
        wave_schedule: vec![1, 2, 5, 10, 20, 40],
        n_subjects: 5000,
        seed: 42,
        thresholds: Thresholds::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config(name: &str, b: Matrix) -> ScenarioConfig {
        let m = b.rows();
        let p = 2 * m;
        let lambda = Matrix::from_fn(p, m, |i, j| if i / 2 == j { 0.8 } else { 0.0 }).unwrap();
        let item_blocks = (0..m)
            .map(|k| ItemBlock::plain(vec![2 * k, 2 * k + 1]))
            .collect();
        ScenarioConfig {
            name: name.to_string(),
            spec: ModelSpec {
                p,
                m,
                lambda,
                b,
                mu0: vec![0.0; m],
                sigma0: Matrix::identity(m),
                sigma_w: Matrix::identity(m),
                rho: 0.2,
                item_blocks,
            },
            wave_schedule: vec![1, 3, 10],
            n_subjects: 400,
            seed: 7,
            thresholds: Thresholds {
                replicates: 50,
                ..Thresholds::default()
            },
        }
    }

    #[test]
    fn builtin_names_resolve_and_unknown_is_rejected() {
        for name in BUILTIN_SCENARIOS {
            let config = builtin_scenario(name).unwrap();
            assert_eq!(config.name, name);
            assert_eq!(config.seed, 42);
            assert_eq!(config.n_subjects, 5000);
            assert_eq!(config.wave_schedule, vec![1, 2, 5, 10, 20, 40]);
            config.require_valid().unwrap();
        }
        assert!(matches!(builtin_scenario("figure2"), Err(Error::Rejected(_))));
    }

    #[test]
    fn identity_scenario_has_identity_transition() {
        let config = builtin_scenario("identity").unwrap();
        assert_eq!(
            config.spec.b.sub(&Matrix::identity(2)).unwrap().max_abs(),
            0.0
        );
    }

    #[test]
    fn figure1_passes_all_validation_checks() {
        let config = builtin_scenario("figure1").unwrap();
        let report = validate_spec(&config.spec, 1e-8);
        assert!(report.all_passed(), "{report:?}");
        // The strong decay condition holds: 0.2 < 0.5^2.
        assert!(report.check("decay-paper-sufficient").unwrap().passed);
    }

    #[test]
    fn mixed_sign_couples_all_three_factors() {
        let config = builtin_scenario("mixed-sign").unwrap();
        let partition = equivalence_classes(&config.spec.b, 1e-12).unwrap();
        assert_eq!(partition.classes, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn positive_block_is_strictly_positive_with_unit_radius() {
        let config = builtin_scenario("positive-block").unwrap();
        let b = &config.spec.b;
        for i in 0..3 {
            for j in 0..3 {
                assert!(b.get(i, j) > 0.1);
            }
        }
        let radius = b.eigenvalues().unwrap()[0].modulus();
        assert!((radius - 1.0).abs() < 1e-12);
        // Same call, same matrix: the seed is internal and fixed.
        let again = builtin_scenario("positive-block").unwrap();
        assert_eq!(b.sub(&again.spec.b).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn anxiety_depression_is_labeled_figure1() {
        let config = builtin_scenario("anxiety-depression").unwrap();
        let figure1 = builtin_scenario("figure1").unwrap();
        assert_eq!(config.spec.b.sub(&figure1.spec.b).unwrap().max_abs(), 0.0);
        assert_eq!(config.spec.item_blocks[0].label.as_deref(), Some("anxiety"));
        assert_eq!(
            config.spec.item_blocks[1].label.as_deref(),
            Some("depression")
        );
    }

    #[test]
    fn config_json_round_trips_and_defaults_thresholds() {
        let config = builtin_scenario("figure1").unwrap();
        let text = config.to_json().unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back.name, config.name);
        assert_eq!(back.thresholds, config.thresholds);

        let minimal = r#"{
            "name": "tiny",
            "spec": {
                "p": 2, "m": 1, "lambda": [[0.8], [0.8]],
                "b": [[0.9]], "rho": 0.5
            },
            "wave_schedule": [1, 4],
            "n_subjects": 10,
            "seed": 1
        }"#;
        let config = ScenarioConfig::from_json(minimal).unwrap();
        assert_eq!(config.thresholds, Thresholds::default());
    }

    #[test]
    fn schedule_validation_rejects_bad_configs() {
        let mut config = small_config("bad", Matrix::identity(2));
        config.wave_schedule = vec![];
        assert!(matches!(
            run_collapse_experiment(&config),
            Err(Error::Rejected(_))
        ));
        config.wave_schedule = vec![1, 1, 2];
        assert!(matches!(
            run_collapse_experiment(&config),
            Err(Error::Rejected(_))
        ));
        config.wave_schedule = vec![3, 2];
        assert!(matches!(
            run_collapse_experiment(&config),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn identity_control_keeps_full_rank_and_zero_cross_block() {
        let config = small_config("identity-small", Matrix::identity(2));
        let report = run_collapse_experiment(&config).unwrap();
        assert_eq!(report.waves.len(), 3);
        for record in &report.waves {
            assert_eq!(record.population_rank, 2);
            assert_eq!(record.cross_block.unwrap().max_abs, 0.0);
        }
        assert_eq!(report.collapse_wave, Some(1));
        assert!(report.verdict.contains("asymptotic rank 2"));
        assert_eq!(report.convergence.status, ConvergenceStatus::Converges);
    }

    #[test]
    fn coupled_transition_collapses_to_one_dimension() {
        let mut config = small_config(
            "coupled-small",
            Matrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap(),
        );
        // The transient eigenvalue is 0.5, so its covariance contribution
        // shrinks like 0.25^t; wave 40 puts it far below the rank cut.
        config.wave_schedule = vec![1, 3, 40];
        let report = run_collapse_experiment(&config).unwrap();
        assert_eq!(report.waves[0].population_rank, 2);
        let last = report.waves.last().unwrap();
        assert_eq!(last.population_rank, 1);
        assert!(report.verdict.starts_with("collapse confirmed"));
        assert!(report.collapse_wave.is_some());
        // The second eigenvalue decays while the first stays put.
        assert!(last.lambda2 < report.waves[0].lambda2);
        assert!(last.lambda1 > 0.5);
        // Coupling induces visible cross-block covariance.
        assert!(last.cross_block.unwrap().max_abs > 0.05);
    }

    #[test]
    fn divergent_transition_still_runs_with_honest_verdict() {
        let config = small_config(
            "divergent-small",
            Matrix::from_diagonal(&[1.5, 0.5]).unwrap(),
        );
        let report = run_collapse_experiment(&config).unwrap();
        assert_eq!(
            report.convergence.status,
            ConvergenceStatus::DivergesUnbounded
        );
        assert_eq!(report.waves.len(), 3);
        assert!(report.verdict.contains("do not converge"));
        assert_eq!(report.collapse_wave, None);
        for record in &report.waves {
            assert!(record.population_rank >= 1);
        }
    }

    #[test]
    fn population_path_ignores_seed_and_sample_size() {
        let base = small_config(
            "pop-a",
            Matrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap(),
        );
        let mut other = base.clone();
        other.seed = 999;
        other.n_subjects = 150;
        let a = run_collapse_experiment(&base).unwrap();
        let b = run_collapse_experiment(&other).unwrap();
        for (ra, rb) in a.waves.iter().zip(&b.waves) {
            assert_eq!(ra.population_rank, rb.population_rank);
            assert_eq!(ra.lambda1, rb.lambda1);
            assert_eq!(ra.lambda2, rb.lambda2);
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let config = small_config(
            "rerun",
            Matrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap(),
        );
        let a = run_collapse_experiment(&config).unwrap();
        let b = run_collapse_experiment(&config).unwrap();
        assert_eq!(report_csv(&a), report_csv(&b));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn report_files_use_canonical_names_and_round_trip() {
        let dir = tempdir().unwrap();
        let config = small_config("files", Matrix::identity(2));
        let report = run_collapse_experiment(&config).unwrap();

        let json_path = write_report(&report, ReportFormat::Json, dir.path()).unwrap();
        let csv_path = write_report(&report, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(json_path.file_name().unwrap(), "files_7.json");
        assert_eq!(csv_path.file_name().unwrap(), "files_7.csv");

        let text = std::fs::read_to_string(&json_path).unwrap();
        let back: ExperimentReport = serde_json::from_str(&text).unwrap();
        assert_eq!(
            serde_json::to_string(&back).unwrap(),
            serde_json::to_string(&report).unwrap()
        );

        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "wave,population_rank,est_reduced,est_parallel,est_gap,lambda1,lambda2,cross_block_max"
        );
        assert_eq!(lines.count(), report.waves.len());
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn write_report_surfaces_io_failures_with_path() {
        let config = small_config("io", Matrix::identity(2));
        let report = run_collapse_experiment(&config).unwrap();
        let missing = Path::new("/nonexistent-directory-for-sure");
        match write_report(&report, ReportFormat::Csv, missing) {
            Err(Error::Io { path, .. }) => {
                assert!(path.starts_with(missing));
            }
            other => panic!("expected I/O error, got {other:?}"),
        }
    }

    #[test]
    fn format_names_parse_and_print() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!(ReportFormat::Json.to_string(), "json");
    }
}
