//! Sweep harness for the two experiment families:
//!
//! * `LoglikSup`: sup over a bootstrap parameter cloud of the gap between
//!   partial- and complete-data mean-loglikelihoods, across sample size,
//!   missingness strength and mechanism.
//! * `MlVsMi`: EM maximum likelihood versus bootstrap-EM multiple
//!   imputation, point estimates and uncertainties, across sample size.
//!
//! Every (cell, replicate) job gets its own derived seed; rows carry their
//! full coordinates so aggregation happens downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::mpsc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{moment_params, GaussianParams};
use crate::io::{bundled_population, read_csv};
use crate::mi::{compare_ml_mi, MiConfig};
use crate::missingness::{ampute, Mechanism, MechanismKind, DEFAULT_SLOPE_MAGNITUDE};
use crate::partial::{bootstrap_cloud, sup_difference};
use crate::seeding::{derive_seed, mix_seed, rng_from};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSource {
    /// The synthetic survey-style parameters shipped with the crate.
    Bundled,
    /// Moments of the complete rows of a CSV file.
    CsvMoments { path: PathBuf },
    Explicit { params: GaussianParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub source: PopulationSource,
    pub population_size: usize,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            source: PopulationSource::Bundled,
            population_size: 500,
            seed: 2024,
        }
    }
}

/// A finite population drawn from `truth`.
#[derive(Clone, Debug)]
pub struct Population {
    pub data: DMatrix<f64>,
    pub truth: GaussianParams,
    /// Moments of `data` (denominator N). Samples are drawn from `data`
    /// with replacement, so these are what sample estimates converge to.
    pub moments: GaussianParams,
    pub columns: Vec<String>,
    /// Incomplete CSV rows left out of the moment computation.
    pub dropped_rows: usize,
}

pub fn make_population(spec: &PopulationSpec) -> Result<Population> {
    if spec.population_size < 2 {
        return Err(Error::InvalidConfig("population_size must be at least 2".into()));
    }
    let (truth, columns, dropped_rows) = match &spec.source {
        PopulationSource::Bundled => {
            let b = bundled_population();
            (b.params, b.columns, 0)
        }
        PopulationSource::Explicit { params } => {
            let cols = (0..params.dim()).map(|i| format!("x{}", i + 1)).collect();
            (params.clone(), cols, 0)
        }
        PopulationSource::CsvMoments { path } => {
            let table = read_csv(path)?;
            let (complete, dropped) = table.complete_rows();
            if complete.nrows() < 2 {
                return Err(Error::Ingest(format!(
                    "{} has fewer than 2 complete rows",
                    path.display()
                )));
            }
            (moment_params(&complete)?, table.headers, dropped)
        }
    };
    let data = truth.sample(spec.population_size, &mut rng_from(spec.seed));
    let moments = moment_params(&data)?;
    Ok(Population {
        data,
        truth,
        moments,
        columns,
        dropped_rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LoglikSup,
    MlVsMi,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::LoglikSup => "loglik_sup",
            Family::MlVsMi => "ml_vs_mi",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub family: Family,
    pub n_grid: Vec<usize>,
    pub psi_grid: Vec<f64>,
    pub mechanisms: Vec<MechanismKind>,
    pub target_col: usize,
    pub driver_col: usize,
    /// Magnitude of the logistic slope; MAR uses `-slope_magnitude` (low
    /// driver → missing), MNAR `+slope_magnitude` (high value → missing).
    pub slope_magnitude: f64,
    pub replicates: usize,
    pub bootstrap_b: usize,
    pub mi: MiConfig,
    pub seed: u64,
}

impl SweepConfig {
    pub fn loglik_sup_default() -> Self {
        let b = bundled_population();
        SweepConfig {
            family: Family::LoglikSup,
            n_grid: (30..=110).collect(),
            psi_grid: vec![0.2, 0.3, 0.4],
            mechanisms: vec![MechanismKind::Mar, MechanismKind::Mnar],
            target_col: b.target_col,
            driver_col: b.driver_col,
            slope_magnitude: DEFAULT_SLOPE_MAGNITUDE,
            replicates: 20,
            bootstrap_b: 100,
            mi: MiConfig::default(),
            seed: 1,
        }
    }

    pub fn ml_vs_mi_default() -> Self {
        SweepConfig {
            family: Family::MlVsMi,
            n_grid: vec![200, 500, 1000, 2000, 5000],
            psi_grid: vec![0.1, 0.3, 0.7],
            mechanisms: vec![MechanismKind::Mar],
            ..SweepConfig::loglik_sup_default()
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::LoglikSup => Self::loglik_sup_default(),
            Family::MlVsMi => Self::ml_vs_mi_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.psi_grid.is_empty() || self.mechanisms.is_empty() {
            return Err(Error::InvalidConfig("grids must be non-empty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::InvalidConfig("sample sizes must be positive".into()));
        }
        if self.family == Family::LoglikSup && self.bootstrap_b == 0 {
            return Err(Error::InvalidConfig("bootstrap_b must be at least 1".into()));
        }
        if self.family == Family::MlVsMi {
            self.mi.validate()?;
        }
        for &psi in &self.psi_grid {
            self.mechanism(self.mechanisms[0], psi).validate()?;
        }
        for &k in &self.mechanisms {
            self.mechanism(k, 0.5).validate()?;
        }
        Ok(())
    }

    pub fn mechanism(&self, kind: MechanismKind, psi: f64) -> Mechanism {
        let m = Mechanism::of_kind(kind, self.target_col, self.driver_col, psi);
        match kind {
            MechanismKind::Mcar => m,
            MechanismKind::Mar => m.with_slope(-self.slope_magnitude),
            MechanismKind::Mnar => m.with_slope(self.slope_magnitude),
        }
    }

    /// Every job of the sweep in canonical order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (mi, &kind) in self.mechanisms.iter().enumerate() {
            for &psi in &self.psi_grid {
                for &n in &self.n_grid {
                    for replicate in 0..self.replicates {
                        let seed = derive_seed(
                            self.seed,
                            &[self.family as u64, kind as u64, mi as u64, psi.to_bits(), n as u64, replicate as u64],
                        );
                        out.push(Cell {
                            index: out.len(),
                            mechanism: kind,
                            psi,
                            n,
                            replicate,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Coordinates of one sweep job.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub mechanism: MechanismKind,
    pub psi: f64,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
}

/// Statistics of one ML-vs-MI job.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub ml_dist: f64,
    pub mi_dist: f64,
    pub ml_unc_dist: f64,
    pub mi_unc_dist: f64,
    pub ml_truth_dist: f64,
    pub mi_truth_dist: f64,
    pub ml_est: Vec<f64>,
    pub mi_est: Vec<f64>,
    pub true_est: Vec<f64>,
    pub ml_unc: Vec<f64>,
    pub mi_unc: Vec<f64>,
    pub true_unc: Vec<f64>,
}

/// One output row: a (cell, replicate) job and its statistics, or the
/// error that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub cell: usize,
    pub family: Family,
    pub mechanism: MechanismKind,
    pub psi: f64,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub achieved_rate: Option<f64>,
    pub sup_abs_diff: Option<f64>,
    /// `None` when the sup is zero (log would be `-inf`).
    pub log_sup: Option<f64>,
    pub comparison: Option<ComparisonRow>,
}

pub const CSV_HEADER: [&str; 24] = [
    "cell",
    "family",
    "mechanism",
    "psi",
    "n",
    "replicate",
    "seed",
    "status",
    "error",
    "achieved_rate",
    "sup_abs_diff",
    "log_sup",
    "ml_dist",
    "mi_dist",
    "ml_unc_dist",
    "mi_unc_dist",
    "ml_truth_dist",
    "mi_truth_dist",
    "ml_est",
    "mi_est",
    "true_est",
    "ml_unc",
    "mi_unc",
    "true_unc",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn joined(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl SweepResult {
    fn base(cell: &Cell, family: Family) -> Self {
        SweepResult {
            cell: cell.index,
            family,
            mechanism: cell.mechanism,
            psi: cell.psi,
            n: cell.n,
            replicate: cell.replicate,
            seed: cell.seed,
            error: None,
            achieved_rate: None,
            sup_abs_diff: None,
            log_sup: None,
            comparison: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Fields in [`CSV_HEADER`] order. Raw estimate vectors are
    /// `;`-separated.
    pub fn csv_record(&self) -> Vec<String> {
        let c = self.comparison.as_ref();
        let cf = |f: fn(&ComparisonRow) -> f64| opt(c.map(f));
        let cv = |f: fn(&ComparisonRow) -> &Vec<f64>| c.map(|r| joined(f(r))).unwrap_or_default();
        vec![
            self.cell.to_string(),
            self.family.to_string(),
            self.mechanism.to_string(),
            self.psi.to_string(),
            self.n.to_string(),
            self.replicate.to_string(),
            self.seed.to_string(),
            if self.is_ok() { "ok" } else { "error" }.to_string(),
            self.error.clone().unwrap_or_default(),
            opt(self.achieved_rate),
            opt(self.sup_abs_diff),
            opt(self.log_sup),
            cf(|r| r.ml_dist),
            cf(|r| r.mi_dist),
            cf(|r| r.ml_unc_dist),
            cf(|r| r.mi_unc_dist),
            cf(|r| r.ml_truth_dist),
            cf(|r| r.mi_truth_dist),
            cv(|r| &r.ml_est),
            cv(|r| &r.mi_est),
            cv(|r| &r.true_est),
            cv(|r| &r.ml_unc),
            cv(|r| &r.mi_unc),
            cv(|r| &r.true_unc),
        ]
    }
}

/// Writes rows as CSV with the fixed header.
pub fn write_results_csv<W: std::io::Write>(w: W, rows: &[SweepResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        wtr.write_record(r.csv_record()).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Canonical serialization: rows sorted by cell index, CSV encoded.
pub fn canonical_table(rows: &[SweepResult]) -> Vec<u8> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.cell);
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &sorted).expect("writing to memory");
    buf
}

fn sample_rows(population: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from(seed);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..population.nrows())).collect();
    population.select_rows(&idx)
}

fn run_cell(config: &SweepConfig, population: &Population, cell: &Cell) -> SweepResult {
    let mut row = SweepResult::base(cell, config.family);
    let mech = config.mechanism(cell.mechanism, cell.psi);
    let sample = sample_rows(&population.data, cell.n, mix_seed(cell.seed, 0));
    let outcome: Result<()> = (|| {
        match config.family {
            Family::LoglikSup => {
                let cloud = bootstrap_cloud(&sample, config.bootstrap_b, mix_seed(cell.seed, 1))?;
                let (partial, report) = ampute(&sample, &mech, mix_seed(cell.seed, 2))?;
                let sup = sup_difference(&cloud, &partial, &sample)?;
                row.achieved_rate = Some(report.achieved_rate);
                row.sup_abs_diff = Some(sup.sup_abs_diff);
                row.log_sup = sup.log_sup.is_finite().then_some(sup.log_sup);
            }
            Family::MlVsMi => {
                let mi = MiConfig {
                    seed: mix_seed(cell.seed, 3),
                    ..config.mi.clone()
                };
                let cmp = compare_ml_mi(&sample, &mech, &population.moments, &mi, mix_seed(cell.seed, 4))?;
                row.achieved_rate = Some(cmp.amputation.achieved_rate);
                row.comparison = Some(ComparisonRow {
                    ml_dist: cmp.ml_dist,
                    mi_dist: cmp.mi_dist,
                    ml_unc_dist: cmp.ml_unc_dist,
                    mi_unc_dist: cmp.mi_unc_dist,
                    ml_truth_dist: cmp.ml_truth_dist,
                    mi_truth_dist: cmp.mi_truth_dist,
                    ml_est: cmp.ml_estimate,
                    mi_est: cmp.mi_estimate,
                    true_est: cmp.true_estimate,
                    ml_unc: cmp.ml_uncertainty,
                    mi_unc: cmp.mi_uncertainty,
                    true_unc: cmp.true_uncertainty,
                });
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("cell {} failed: {e}", cell.index);
        row.error = Some(format!("{}: {e}", e.code()));
    }
    row
}

/// Runs every job of `config` against `population` on a pool of `jobs`
/// workers (all cores when `None`). `sink` sees rows in completion order;
/// the returned rows are in canonical cell order.
pub fn run_sweep_on(
    config: &SweepConfig,
    population: &Population,
    jobs: Option<usize>,
    sink: &mut dyn FnMut(&SweepResult),
) -> Result<Vec<SweepResult>> {
    config.validate()?;
    let m = population.data.ncols();
    if config.target_col >= m || config.driver_col >= m {
        return Err(Error::InvalidConfig(format!("mechanism columns out of range for m = {m}")));
    }
    let cells = config.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (tx, rx) = mpsc::channel();
    let mut rows = Vec::with_capacity(cells.len());
    std::thread::scope(|s| {
        s.spawn(|| {
            pool.install(|| {
                cells.par_iter().for_each_with(tx, |tx, cell| {
                    // receiver only disappears if the sink panicked
                    let _ = tx.send(run_cell(config, population, cell));
                });
            });
        });
        for row in rx {
            sink(&row);
            rows.push(row);
        }
    });
    rows.sort_by_key(|r| r.cell);
    Ok(rows)
}

/// [`make_population`] followed by [`run_sweep_on`].
pub fn run_sweep(
    config: &SweepConfig,
    spec: &PopulationSpec,
    jobs: Option<usize>,
    sink: &mut dyn FnMut(&SweepResult),
) -> Result<Vec<SweepResult>> {
    let population = make_population(spec)?;
    run_sweep_on(config, &population, jobs, sink)
}

fn log_sup_value(r: &SweepResult) -> Option<f64> {
    if !r.is_ok() {
        return None;
    }
    // zero sup is a legitimate -inf, smaller than any observed value
    Some(r.log_sup.unwrap_or(f64::NEG_INFINITY))
}

/// Median and IQR of `log_sup` per (mechanism, psi, n).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoglikCellSummary {
    pub mechanism: MechanismKind,
    pub psi: f64,
    pub n: usize,
    pub replicates: usize,
    pub median_log_sup: f64,
    pub iqr_log_sup: f64,
}

fn psi_key(psi: f64) -> u64 {
    psi.to_bits()
}

pub fn loglik_cells(rows: &[SweepResult]) -> Vec<LoglikCellSummary> {
    let mut groups: BTreeMap<(MechanismKind, u64, usize), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.family == Family::LoglikSup) {
        if let Some(v) = log_sup_value(r) {
            groups.entry((r.mechanism, psi_key(r.psi), r.n)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|((mechanism, psi, n), vals)| LoglikCellSummary {
            mechanism,
            psi: f64::from_bits(psi),
            n,
            replicates: vals.len(),
            median_log_sup: stats::median(&vals),
            iqr_log_sup: stats::iqr(&vals),
        })
        .collect()
}

/// Trend of `log_sup` in `n` for one (mechanism, psi) group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendTest {
    pub mechanism: MechanismKind,
    pub psi: f64,
    /// OLS slope of the per-`n` median `log_sup` on `n`.
    pub slope_of_medians: f64,
    /// Replicates whose own `log_sup`-on-`n` slope is negative.
    pub negative_slopes: usize,
    pub replicates_tested: usize,
    /// One-sided sign-test p-value for "slopes tend to be negative".
    pub sign_test_p: f64,
}

pub fn trend_tests(rows: &[SweepResult]) -> Vec<TrendTest> {
    let cells = loglik_cells(rows);
    let mut by_group: BTreeMap<(MechanismKind, u64), Vec<&LoglikCellSummary>> = BTreeMap::new();
    for c in &cells {
        by_group.entry((c.mechanism, psi_key(c.psi))).or_default().push(c);
    }
    let mut per_rep: BTreeMap<(MechanismKind, u64, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.family == Family::LoglikSup && r.is_ok()) {
        // per-replicate regressions skip -inf points
        if let Some(v) = r.log_sup {
            per_rep
                .entry((r.mechanism, psi_key(r.psi), r.replicate))
                .or_default()
                .push((r.n as f64, v));
        }
    }
    by_group
        .into_iter()
        .map(|((mechanism, psi), cells)| {
            let finite: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.median_log_sup.is_finite())
                .map(|c| (c.n as f64, c.median_log_sup))
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = finite.into_iter().unzip();
            let slope_of_medians = if xs.len() >= 2 { stats::ols_slope(&xs, &ys) } else { f64::NAN };
            let mut negative = 0;
            let mut tested = 0;
            for ((m, p, _), pts) in &per_rep {
                if *m != mechanism || *p != psi || pts.len() < 2 {
                    continue;
                }
                let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
                tested += 1;
                if stats::ols_slope(&x, &y) < 0.0 {
                    negative += 1;
                }
            }
            TrendTest {
                mechanism,
                psi: f64::from_bits(psi),
                slope_of_medians,
                negative_slopes: negative,
                replicates_tested: tested,
                sign_test_p: stats::sign_test_p(negative, tested),
            }
        })
        .collect()
}

/// Between-psi spread of median `log_sup` at one `n`, against the
/// within-cell IQRs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiSpread {
    pub mechanism: MechanismKind,
    pub n: usize,
    pub medians: Vec<(f64, f64)>,
    pub iqrs: Vec<(f64, f64)>,
    /// max - min of the medians over psi.
    pub spread: f64,
    pub mean_iqr: f64,
}

pub fn psi_spread(rows: &[SweepResult], mechanism: MechanismKind, n: usize) -> Option<PsiSpread> {
    let cells: Vec<LoglikCellSummary> = loglik_cells(rows)
        .into_iter()
        .filter(|c| c.mechanism == mechanism && c.n == n)
        .collect();
    if cells.is_empty() {
        return None;
    }
    let medians: Vec<(f64, f64)> = cells.iter().map(|c| (c.psi, c.median_log_sup)).collect();
    let iqrs: Vec<(f64, f64)> = cells.iter().map(|c| (c.psi, c.iqr_log_sup)).collect();
    let (lo, hi) = medians
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, m)| (lo.min(m), hi.max(m)));
    Some(PsiSpread {
        mechanism,
        n,
        spread: hi - lo,
        mean_iqr: stats::mean(&iqrs.iter().map(|x| x.1).collect::<Vec<_>>()),
        medians,
        iqrs,
    })
}

/// ML-vs-MI summary for one (mechanism, psi, n).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MlMiCellSummary {
    pub mechanism: MechanismKind,
    pub psi: f64,
    pub n: usize,
    pub replicates: usize,
    pub median_ml_truth_dist: f64,
    pub median_mi_truth_dist: f64,
    pub median_ml_dist: f64,
    pub median_mi_dist: f64,
    pub median_ml_unc_dist: f64,
    pub median_mi_unc_dist: f64,
    /// Fraction of replicates with `ml_truth_dist <= mi_truth_dist`.
    pub ml_closer_estimate: f64,
    /// Fraction of replicates with `ml_dist <= mi_dist`, i.e. measured
    /// against the complete-sample estimate.
    pub ml_closer_complete_estimate: f64,
    /// Fraction of replicates with `ml_unc_dist <= mi_unc_dist`.
    pub ml_closer_uncertainty: f64,
}

pub fn ml_mi_cells(rows: &[SweepResult]) -> Vec<MlMiCellSummary> {
    let mut groups: BTreeMap<(MechanismKind, u64, usize), Vec<&ComparisonRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.family == Family::MlVsMi && r.is_ok()) {
        if let Some(c) = &r.comparison {
            groups.entry((r.mechanism, psi_key(r.psi), r.n)).or_default().push(c);
        }
    }
    groups
        .into_iter()
        .map(|((mechanism, psi, n), cs)| {
            let col = |f: fn(&ComparisonRow) -> f64| cs.iter().map(|c| f(c)).collect::<Vec<f64>>();
            let k = cs.len() as f64;
            MlMiCellSummary {
                mechanism,
                psi: f64::from_bits(psi),
                n,
                replicates: cs.len(),
                median_ml_truth_dist: stats::median(&col(|c| c.ml_truth_dist)),
                median_mi_truth_dist: stats::median(&col(|c| c.mi_truth_dist)),
                median_ml_dist: stats::median(&col(|c| c.ml_dist)),
                median_mi_dist: stats::median(&col(|c| c.mi_dist)),
                median_ml_unc_dist: stats::median(&col(|c| c.ml_unc_dist)),
                median_mi_unc_dist: stats::median(&col(|c| c.mi_unc_dist)),
                ml_closer_estimate: cs.iter().filter(|c| c.ml_truth_dist <= c.mi_truth_dist).count() as f64 / k,
                ml_closer_complete_estimate: cs.iter().filter(|c| c.ml_dist <= c.mi_dist).count() as f64 / k,
                ml_closer_uncertainty: cs.iter().filter(|c| c.ml_unc_dist <= c.mi_unc_dist).count() as f64 / k,
            }
        })
        .collect()
}
