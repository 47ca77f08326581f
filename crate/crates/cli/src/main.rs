//! Command-line front door: analyze transition matrices, simulate panels,
//! compute population/equilibrium covariances, estimate dimensionality, and
//! run full experiments — all on JSON model specs.
//!
//! Exit codes: 0 success, 2 invalid input or config, 3 numeric failure,
//! 4 I/O failure. Every failure prints a one-line diagnostic to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use factor_collapse::equilibrium::{
    block_decompose, classify_convergence, equivalence_classes, DEFAULT_CONVERGENCE_TOL,
    DEFAULT_ZERO_TOL,
};
use factor_collapse::error::{Error, Result};
use factor_collapse::experiment::{
    builtin_scenario, run_collapse_experiment, write_report, ReportFormat, ScenarioConfig,
    BUILTIN_SCENARIOS,
};
use factor_collapse::extraction::{
    estimate_dimensionality, extract_loadings, sample_covariance, DimMethod, ExtractionParams,
};
use factor_collapse::linalg::Matrix;
use factor_collapse::model::{
    equilibrium_covariance, population_covariance, read_panel_csv, simulate_panel, ModelSpec,
    DEFAULT_EQUILIBRIUM_TOL, DEFAULT_MAX_WAVES,
};

/// Dimensionality collapse toolkit for dynamic factor models.
#[derive(Debug, Parser)]
#[command(name = "factor-collapse", version, max_term_width = 100)]
#[command(
    after_help = "Environment:\n  FACTOR_COLLAPSE_THREADS  cap internal parallelism (0 or unset = auto)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Print progress notes to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the long-run behavior of a transition matrix.
    ///
    /// Reads either a bare nested-array matrix or a full model spec (its
    /// `b` field is used) and prints the convergence report, the coupling
    /// partition, and the per-class reports as one JSON object. A divergent
    /// matrix is a successful analysis, not an error.
    Analyze(AnalyzeArgs),

    /// Simulate a longitudinal panel and write it as CSV.
    Simulate(SimulateArgs),

    /// Print the population covariance at a wave, or the equilibrium.
    Covariance(CovarianceArgs),

    /// Estimate factor dimensionality from a covariance or a panel.
    ///
    /// The input is a panel CSV (`*.csv`) or a JSON covariance matrix.
    Extract(ExtractArgs),

    /// Run a collapse experiment and write JSON + CSV reports.
    ///
    /// The argument is a built-in scenario name (see `scenarios`) or a path
    /// to a scenario config JSON file.
    Experiment(ExperimentArgs),

    /// List the built-in scenario names.
    Scenarios,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Matrix JSON file: bare nested array or a full model spec.
    input: PathBuf,

    /// Half-width of the eigenvalue band treated as exactly 1.
    #[arg(long, default_value_t = DEFAULT_CONVERGENCE_TOL)]
    tol: f64,

    /// Magnitude at or below which an entry is a structural zero.
    #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
    zero_tol: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model spec JSON file.
    spec: PathBuf,

    /// Number of measurement waves (recorded as waves 0..WAVES-1).
    #[arg(long)]
    waves: usize,

    /// Number of subjects.
    #[arg(long)]
    n: usize,

    /// Root seed for the trajectory streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CovarianceArgs {
    /// Model spec JSON file.
    spec: PathBuf,

    /// Wave at which to evaluate the population covariance.
    #[arg(long, conflicts_with = "equilibrium", required_unless_present = "equilibrium")]
    wave: Option<usize>,

    /// Iterate the covariance recursion to its fixed point instead.
    #[arg(long)]
    equilibrium: bool,

    /// Frobenius-norm stop tolerance for the equilibrium iteration.
    #[arg(long, default_value_t = DEFAULT_EQUILIBRIUM_TOL)]
    equilibrium_tol: f64,

    /// Wave budget for the equilibrium iteration.
    #[arg(long, default_value_t = DEFAULT_MAX_WAVES)]
    max_waves: usize,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Panel CSV (`*.csv`) or JSON covariance matrix file.
    input: PathBuf,

    /// Dimensionality method: reduced-rank, parallel-analysis, or gap-ratio.
    #[arg(long)]
    method: DimMethod,

    /// Wave to analyze (panel input only; default: last wave).
    #[arg(long)]
    wave: Option<usize>,

    /// Also estimate this many factors' loadings.
    #[arg(long, value_name = "K")]
    loadings: Option<usize>,

    /// Relative singular-value cut for the reduced-rank method.
    #[arg(long, default_value_t = 1e-6)]
    rank_tol: f64,

    /// Sample size behind a covariance-matrix input (parallel analysis
    /// needs it; inferred from panel inputs).
    #[arg(long)]
    sample_size: Option<usize>,

    /// Monte Carlo replicates for parallel analysis.
    #[arg(long, default_value_t = 200)]
    replicates: usize,

    /// Noise-eigenvalue percentile for parallel analysis, in (0, 100].
    #[arg(long, default_value_t = 95.0)]
    percentile: f64,

    /// Seed for the parallel-analysis noise benchmark.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,

    /// Largest candidate factor count for the gap-ratio method.
    #[arg(long)]
    max_k: Option<usize>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Built-in scenario name or scenario config JSON path.
    scenario: String,

    /// Directory for the report files (created if missing).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = configure_threads().and_then(|()| run(&cli)) {
        eprintln!("error: {err}");
        return ExitCode::from(err.exit_code());
    }
    ExitCode::SUCCESS
}

/// Applies `FACTOR_COLLAPSE_THREADS` to the global worker pool. Absent or
/// `0` leaves the automatic thread count.
fn configure_threads() -> Result<()> {
    let Some(raw) = std::env::var_os("FACTOR_COLLAPSE_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let count: usize = text
        .trim()
        .parse()
        .map_err(|_| Error::rejected(format!("FACTOR_COLLAPSE_THREADS={text:?} is not a count")))?;
    if count == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(count)
        .build_global()
        .map_err(|e| Error::rejected(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Simulate(args) => simulate(args, cli.verbose),
        Command::Covariance(args) => covariance(args),
        Command::Extract(args) => extract(args, cli.verbose),
        Command::Experiment(args) => experiment(args, cli.verbose),
        Command::Scenarios => {
            for name in BUILTIN_SCENARIOS {
                emit(name)?;
            }
            Ok(())
        }
    }
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a transition matrix: a bare nested array, or the `b` field of a
/// full model spec.
fn read_transition(path: &Path) -> Result<Matrix> {
    let text = read_input(path)?;
    if let Ok(matrix) = serde_json::from_str::<Matrix>(&text) {
        return Ok(matrix);
    }
    match ModelSpec::from_json(&text) {
        Ok(spec) => Ok(spec.b),
        Err(_) => Err(Error::Parse(format!(
            "{} holds neither a nested-array matrix nor a model spec",
            path.display()
        ))),
    }
}

fn read_spec(path: &Path) -> Result<ModelSpec> {
    ModelSpec::from_json(&read_input(path)?)
}

/// Writes one line to stdout. A closed pipe (`cmd | head` and friends) is
/// treated as success: the reader has everything it wanted.
fn emit(line: impl std::fmt::Display) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout(), "{line}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::io("<stdout>", e)),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serialization: {e}")))?;
    emit(text)
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let b = read_transition(&args.input)?;
    let convergence = classify_convergence(&b, args.tol)?;
    let partition = equivalence_classes(&b, args.zero_tol)?;
    let classes = block_decompose(&b, &partition, args.tol, args.zero_tol)?;
    print_json(&serde_json::json!({
        "convergence": convergence,
        "partition": partition,
        "classes": classes,
    }))
}

fn simulate(args: &SimulateArgs, verbose: bool) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let panel = simulate_panel(&spec, args.waves, args.n, args.seed)?;
    panel.write_csv(&args.out)?;
    if verbose {
        eprintln!(
            "simulated {} subjects x {} waves x {} items -> {}",
            args.n,
            args.waves,
            spec.p,
            args.out.display()
        );
    }
    emit(args.out.display())?;
    Ok(())
}

fn covariance(args: &CovarianceArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    if args.equilibrium {
        let equilibrium = equilibrium_covariance(&spec, args.equilibrium_tol, args.max_waves)?;
        print_json(&equilibrium)
    } else {
        let wave = args.wave.expect("clap enforces --wave without --equilibrium");
        print_json(&population_covariance(&spec, wave)?)
    }
}

fn extract(args: &ExtractArgs, verbose: bool) -> Result<()> {
    let is_csv = args
        .input
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("csv"));

    let mut params = ExtractionParams {
        rank_rel_tol: args.rank_tol,
        sample_size: args.sample_size,
        replicates: args.replicates,
        percentile: args.percentile,
        noise_seed: args.noise_seed,
        max_k: args.max_k,
    };

    let covariance = if is_csv {
        let panel = read_panel_csv(&args.input)?;
        let wave = args.wave.unwrap_or(panel.n_waves() - 1);
        if verbose {
            eprintln!(
                "panel: {} subjects x {} waves x {} items; analyzing wave {wave}",
                panel.n_subjects(),
                panel.n_waves(),
                panel.n_items()
            );
        }
        params.sample_size = Some(args.sample_size.unwrap_or(panel.n_subjects()));
        sample_covariance(&panel, wave)?
    } else {
        if args.wave.is_some() {
            return Err(Error::rejected(
                "--wave applies only to panel CSV input; a covariance matrix has no waves",
            ));
        }
        serde_json::from_str::<Matrix>(&read_input(&args.input)?).map_err(|e| {
            Error::Parse(format!(
                "{} is not a nested-array covariance matrix: {e}",
                args.input.display()
            ))
        })?
    };

    let dimensionality = estimate_dimensionality(&covariance, args.method, &params)?;
    match args.loadings {
        None => print_json(&dimensionality),
        Some(k) => {
            let loadings = extract_loadings(&covariance, k)?;
            print_json(&serde_json::json!({
                "dimensionality": dimensionality,
                "loadings": loadings,
            }))
        }
    }
}

fn experiment(args: &ExperimentArgs, verbose: bool) -> Result<()> {
    let path = Path::new(&args.scenario);
    let config: ScenarioConfig = if path.is_file() {
        ScenarioConfig::from_json(&read_input(path)?)?
    } else {
        builtin_scenario(&args.scenario)?
    };
    if verbose {
        eprintln!(
            "scenario {:?}: {} subjects, waves {:?}, seed {}",
            config.name, config.n_subjects, config.wave_schedule, config.seed
        );
    }

    let report = run_collapse_experiment(&config)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let json_path = write_report(&report, ReportFormat::Json, &args.out)?;
    let csv_path = write_report(&report, ReportFormat::Csv, &args.out)?;

    emit(format!("wrote {}", json_path.display()))?;
    emit(format!("wrote {}", csv_path.display()))?;
    emit(format!("verdict: {}", report.verdict))?;
    Ok(())
}
