//! Panel simulation and CSV exchange.
//!
//! A panel holds every subject's observed item values at every wave, plus
//! (for simulated panels) the latent factor trajectories behind them, which
//! make handy oracles in tests. Subjects are simulated in parallel; each
//! subject draws from its own substream derived from (seed, subject index),
//! so results do not depend on thread count or scheduling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_rng, DOMAIN_PANEL};

use super::ModelSpec;

/// Observed item trajectories for a simulated or loaded panel of subjects.
#[derive(Debug, Clone)]
pub struct TrajectoryPanel {
    n_subjects: usize,
    n_waves: usize,
    p: usize,
    /// Row-major block per subject: wave-major, item-minor.
    observations: Vec<f64>,
    /// Latent trajectories, present only for simulated panels.
    latents: Option<LatentBlock>,
    /// Seed that produced the panel, absent for panels loaded from disk.
    seed: Option<u64>,
}

#[derive(Debug, Clone)]
struct LatentBlock {
    m: usize,
    values: Vec<f64>,
}

impl TrajectoryPanel {
    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_waves(&self) -> usize {
        self.n_waves
    }

    pub fn n_items(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Observed item values of one subject at one wave, length `p`.
    pub fn observation(&self, subject: usize, wave: usize) -> &[f64] {
        assert!(subject < self.n_subjects, "subject index out of bounds");
        assert!(wave < self.n_waves, "wave index out of bounds");
        let start = (subject * self.n_waves + wave) * self.p;
        &self.observations[start..start + self.p]
    }

    /// Latent factor values of one subject at one wave, if recorded.
    pub fn latent(&self, subject: usize, wave: usize) -> Option<&[f64]> {
        let block = self.latents.as_ref()?;
        assert!(subject < self.n_subjects, "subject index out of bounds");
        assert!(wave < self.n_waves, "wave index out of bounds");
        let start = (subject * self.n_waves + wave) * block.m;
        Some(&block.values[start..start + block.m])
    }

    /// Iterates over every subject's observation row at a fixed wave.
    pub fn wave_rows(&self, wave: usize) -> impl Iterator<Item = &[f64]> + '_ {
        assert!(wave < self.n_waves, "wave index out of bounds");
        (0..self.n_subjects).map(move |s| self.observation(s, wave))
    }

    /// Writes the panel as CSV with header `subject,wave,item_1..item_p`,
    /// one row per (subject, wave), LF line endings, indices 0-based.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            write!(out, "subject,wave")?;
            for item in 1..=self.p {
                write!(out, ",item_{item}")?;
            }
            out.write_all(b"\n")?;
            for subject in 0..self.n_subjects {
                for wave in 0..self.n_waves {
                    write!(out, "{subject},{wave}")?;
                    for value in self.observation(subject, wave) {
                        write!(out, ",{value}")?;
                    }
                    out.write_all(b"\n")?;
                }
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Draws a panel from the model: per subject, `eta^0 ~ Normal(mu0, Sigma0)`,
/// then `eta^t = B eta^{t-1} + W^t` with `W^t ~ Normal(0, rho^t Sigma_w)`,
/// and at every wave `Y^t = Lambda eta^t + eps` with fresh standard-normal
/// errors per item.
///
/// Waves run `0..n_waves`. Each subject uses an independent substream
/// derived from `(seed, subject)`; within a subject the draw order is the
/// initial state (m variates), then per wave `t >= 1` the innovation
/// (m variates), then per wave `t >= 0` the measurement errors (p variates).
/// Covariances enter through their symmetric PSD square roots; indefinite
/// input is rejected.
pub fn simulate_panel(
    spec: &ModelSpec,
    n_waves: usize,
    n_subjects: usize,
    seed: u64,
) -> Result<TrajectoryPanel> {
    spec.require_sound()?;
    if n_waves == 0 || n_subjects == 0 {
        return Err(Error::rejected("n_waves and n_subjects must be positive"));
    }
    let (p, m) = (spec.p, spec.m);
    let root0 = spec.sigma0.psd_sqrt()?;
    let root_w = spec.sigma_w.psd_sqrt()?;
    let schedule = spec.noise_schedule();

    let mut observations = vec![0.0f64; n_subjects * n_waves * p];
    let mut latents = vec![0.0f64; n_subjects * n_waves * m];

    observations
        .par_chunks_mut(n_waves * p)
        .zip(latents.par_chunks_mut(n_waves * m))
        .enumerate()
        .try_for_each(|(subject, (obs, lat))| -> Result<()> {
            let mut rng = derive_rng(seed, DOMAIN_PANEL, subject as u64);
            let draw = |n: usize, rng: &mut rand_chacha::ChaCha20Rng| -> Vec<f64> {
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            };

            let z = draw(m, &mut rng);
            let mut eta: Vec<f64> = root0
                .mul_vec(&z)?
                .iter()
                .zip(&spec.mu0)
                .map(|(shock, mean)| mean + shock)
                .collect();

            for wave in 0..n_waves {
                if wave > 0 {
                    let z = draw(m, &mut rng);
                    let shock = root_w.mul_vec(&z)?;
                    let scale = schedule.weight(wave).sqrt();
                    let propagated = spec.b.mul_vec(&eta)?;
                    for (e, (prop, s)) in
                        eta.iter_mut().zip(propagated.iter().zip(shock.iter()))
                    {
                        *e = prop + scale * s;
                    }
                }
                lat[wave * m..(wave + 1) * m].copy_from_slice(&eta);
                let signal = spec.lambda.mul_vec(&eta)?;
                let noise = draw(p, &mut rng);
                for (out, (sig, eps)) in obs[wave * p..(wave + 1) * p]
                    .iter_mut()
                    .zip(signal.iter().zip(noise.iter()))
                {
                    *out = sig + eps;
                }
            }
            Ok(())
        })?;

    Ok(TrajectoryPanel {
        n_subjects,
        n_waves,
        p,
        observations,
        latents: Some(LatentBlock { m, values: latents }),
        seed: Some(seed),
    })
}

/// Reads a panel from CSV produced by [`TrajectoryPanel::write_csv`] (or
/// any file with the same layout). The grid must be complete: every
/// (subject, wave) pair in `0..n_subjects x 0..n_waves` exactly once, rows
/// in subject-major order.
pub fn read_panel_csv(path: &Path) -> Result<TrajectoryPanel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Parse("panel CSV is empty".into())),
    };
    let columns: Vec<&str> = header.trim_end().split(',').collect();
    if columns.len() < 3 || columns[0] != "subject" || columns[1] != "wave" {
        return Err(Error::Parse(format!(
            "panel CSV header must start with subject,wave,item_1..: got {header:?}"
        )));
    }
    let p = columns.len() - 2;
    for (k, col) in columns[2..].iter().enumerate() {
        let expected = format!("item_{}", k + 1);
        if *col != expected {
            return Err(Error::Parse(format!(
                "panel CSV column {} is {col:?}, expected {expected:?}",
                k + 2
            )));
        }
    }

    let mut observations = Vec::new();
    let mut rows = 0usize;
    let mut n_waves = 0usize;
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 2 {
            return Err(Error::Parse(format!(
                "panel CSV line {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                p + 2
            )));
        }
        let parse_index = |field: &str, what: &str| -> Result<usize> {
            field.parse().map_err(|_| {
                Error::Parse(format!(
                    "panel CSV line {}: bad {what} index {field:?}",
                    lineno + 2
                ))
            })
        };
        let subject = parse_index(fields[0], "subject")?;
        let wave = parse_index(fields[1], "wave")?;
        // Rows must arrive subject-major, wave-minor, with no gaps. The
        // first wrap back to wave 0 fixes the per-subject wave count.
        if n_waves == 0 && rows > 0 && wave == 0 {
            n_waves = rows;
        }
        let (want_subject, want_wave) = if n_waves == 0 {
            (0, rows)
        } else {
            (rows / n_waves, rows % n_waves)
        };
        if subject != want_subject || wave != want_wave {
            return Err(Error::Parse(format!(
                "panel CSV line {}: expected subject {want_subject} wave {want_wave}, \
                 got {subject},{wave}",
                lineno + 2
            )));
        }
        for field in &fields[2..] {
            let value: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "panel CSV line {}: bad value {field:?}",
                    lineno + 2
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Parse(format!(
                    "panel CSV line {}: non-finite value {field:?}",
                    lineno + 2
                )));
            }
            observations.push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse("panel CSV has a header but no rows".into()));
    }
    // A file that never wrapped back to wave 0 is a single subject.
    if n_waves == 0 {
        n_waves = rows;
    }
    if rows % n_waves != 0 {
        return Err(Error::Parse(format!(
            "panel CSV ends mid-subject: {rows} rows with {n_waves} waves per subject"
        )));
    }
    Ok(TrajectoryPanel {
        n_subjects: rows / n_waves,
        n_waves,
        p,
        observations,
        latents: None,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::ItemBlock;
    use tempfile::tempdir;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn small_spec() -> ModelSpec {
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

    fn sample_covariance_at(panel: &TrajectoryPanel, wave: usize) -> Matrix {
        let p = panel.n_items();
        let n = panel.n_subjects();
        let mut mean = vec![0.0; p];
        for row in panel.wave_rows(wave) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = Matrix::zeros(p, p);
        for row in panel.wave_rows(wave) {
            for i in 0..p {
                for j in 0..p {
                    let add = (row[i] - mean[i]) * (row[j] - mean[j]);
                    cov.set(i, j, cov.get(i, j) + add);
                }
            }
        }
        cov.scaled(1.0 / (n as f64 - 1.0))
    }

    #[test]
    fn same_seed_reproduces_bit_identically() {
        let spec = small_spec();
        let a = simulate_panel(&spec, 5, 40, 7).unwrap();
        let b = simulate_panel(&spec, 5, 40, 7).unwrap();
        assert_eq!(a.observations, b.observations);
        let c = simulate_panel(&spec, 5, 40, 8).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let spec = small_spec();
        let pools: Vec<_> = [1, 4]
            .iter()
            .map(|&threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| simulate_panel(&spec, 4, 25, 11).unwrap())
            })
            .collect();
        assert_eq!(pools[0].observations, pools[1].observations);
    }

    #[test]
    fn deterministic_latent_state_is_exact() {
        // Zero covariances freeze the latent state at mu0; the identity
        // transition then carries it forward without change.
        let spec = ModelSpec {
            p: 3,
            m: 2,
            lambda: mat(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]),
            b: Matrix::identity(2),
            mu0: vec![1.0, 1.0],
            sigma0: Matrix::zeros(2, 2),
            sigma_w: Matrix::zeros(2, 2),
            rho: 0.5,
            item_blocks: vec![],
        };
        let panel = simulate_panel(&spec, 4, 200, 3).unwrap();
        for subject in [0, 57, 199] {
            for wave in 0..4 {
                assert_eq!(panel.latent(subject, wave).unwrap(), &[1.0, 1.0]);
            }
        }
        // Observed means sit at Lambda * (1,1) = (1, 1, 2) up to noise.
        let n = panel.n_subjects() as f64;
        let se = 4.0 / n.sqrt();
        for (item, expected) in [(0usize, 1.0f64), (1, 1.0), (2, 2.0)] {
            let mean: f64 = panel
                .wave_rows(3)
                .map(|row| row[item])
                .sum::<f64>()
                / n;
            assert!(
                (mean - expected).abs() < se,
                "item {item}: mean {mean}, expected {expected}"
            );
        }
    }

    #[test]
    fn zero_loadings_leave_pure_noise() {
        let spec = ModelSpec {
            p: 6,
            m: 2,
            lambda: Matrix::zeros(6, 2),
            b: mat(&[&[0.7, 0.3], &[0.2, 0.8]]),
            mu0: vec![0.0, 0.0],
            sigma0: Matrix::identity(2),
            sigma_w: Matrix::identity(2),
            rho: 0.5,
            item_blocks: vec![],
        };
        let panel = simulate_panel(&spec, 4, 10_000, 99).unwrap();
        let cov = sample_covariance_at(&panel, 3);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert!(
                        cov.get(i, j).abs() < 0.05,
                        "off-diagonal ({i},{j}) = {}",
                        cov.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn sample_covariance_tracks_population_covariance() {
        let spec = small_spec();
        let wave = 3;
        let n = 20_000;
        let panel = simulate_panel(&spec, wave + 1, n, 12).unwrap();
        let sample = sample_covariance_at(&panel, wave);
        let population = crate::model::population_covariance(&spec, wave).unwrap();
        // Entries of a Gaussian sample covariance have standard error
        // roughly sqrt((c_ii c_jj + c_ij^2) / n) <= 2.4/sqrt(n) here.
        let budget = 3.0 * 2.4 / (n as f64).sqrt();
        let gap = sample.sub(&population).unwrap().max_abs();
        assert!(gap < budget, "max entry gap {gap}, budget {budget}");
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let mut spec = small_spec();
        spec.sigma0 = mat(&[&[1.0, 0.0], &[0.0, -0.5]]);
        assert!(matches!(
            simulate_panel(&spec, 2, 5, 1),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let spec = small_spec();
        let panel = simulate_panel(&spec, 3, 17, 5).unwrap();
        panel.write_csv(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "subject,wave,item_1,item_2,item_3,item_4"
        );
        assert_eq!(text.lines().count(), 1 + 17 * 3);
        assert!(!text.contains('\r'));

        let back = read_panel_csv(&path).unwrap();
        assert_eq!(back.n_subjects(), 17);
        assert_eq!(back.n_waves(), 3);
        assert_eq!(back.n_items(), 4);
        assert!(back.latent(0, 0).is_none());
        assert_eq!(back.seed(), None);
        // Shortest-round-trip float formatting restores exact bits.
        assert_eq!(back.observations, panel.observations);
    }

    #[test]
    fn csv_reader_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let cases = [
            ("empty.csv", ""),
            ("badheader.csv", "wave,subject,item_1\n0,0,1.0\n"),
            ("baditem.csv", "subject,wave,thing\n0,0,1.0\n"),
            ("gap.csv", "subject,wave,item_1\n0,0,1.0\n0,2,1.0\n"),
            ("short.csv", "subject,wave,item_1,item_2\n0,0,1.0\n"),
            (
                "ragged.csv",
                "subject,wave,item_1\n0,0,1.0\n0,1,2.0\n1,0,3.0\n1,1,bad\n",
            ),
            (
                "midsubject.csv",
                "subject,wave,item_1\n0,0,1.0\n0,1,2.0\n1,0,3.0\n",
            ),
        ];
        for (name, contents) in cases {
            let path = dir.path().join(name);
            std::fs::write(&path, contents).unwrap();
            assert!(
                matches!(read_panel_csv(&path), Err(Error::Parse(_))),
                "{name} should fail to parse"
            );
        }
    }

    #[test]
    fn wave_rows_visits_each_subject_once() {
        let spec = small_spec();
        let panel = simulate_panel(&spec, 2, 9, 21).unwrap();
        assert_eq!(panel.wave_rows(1).count(), 9);
        let first: Vec<f64> = panel.wave_rows(1).next().unwrap().to_vec();
        assert_eq!(first, panel.observation(0, 1));
    }
}
