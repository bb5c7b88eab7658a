//! Bootstrap-EM multiple imputation and the ML-versus-MI comparison.
//!
//! Each imputation refits EM on a bootstrap resample of the rows, fills
//! every missing cell of the original data with one draw from the implied
//! conditional normal, and summarizes the completed dataset by its sample
//! moments. The resulting cloud is reported as its mean and SD; no Rubin
//! combining is done.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, em_uncertainty, EmConfig, EmInit, UncertaintyEstimate, UncertaintyMethod};
use crate::error::{Error, Result};
use crate::gaussian::{cholesky_lower, moment_params, nearest_pd, stacked_len, GaussianParams};
use crate::missingness::{ampute, AmputationReport, Mechanism, Pattern};
use crate::partial::PartialMatrix;
use crate::seeding::{mix_seed, resample_indices, rng_from};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiConfig {
    pub num_imputations: usize,
    pub em: EmConfig,
    pub seed: u64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            num_imputations: 200,
            em: EmConfig::default(),
            seed: 0,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_imputations < 2 {
            return Err(Error::InvalidConfig("num_imputations must be at least 2".into()));
        }
        self.em.validate()
    }
}

#[derive(Clone, Debug)]
pub struct MiResult {
    /// Complete-data moments of each completed dataset.
    pub estimate_cloud: Vec<GaussianParams>,
    pub point_estimate: GaussianParams,
    pub uncertainty: UncertaintyEstimate,
}

/// Seed of imputation `j` under `mi_seed`.
pub fn imputation_seed(mi_seed: u64, j: usize) -> u64 {
    mix_seed(mi_seed, j as u64)
}

/// One imputation: returns the completed dataset and the EM estimate used
/// to fill it (`None` when nothing was missing).
pub fn impute_once(data: &PartialMatrix, seed: u64, em: &EmConfig) -> Result<(DMatrix<f64>, Option<GaussianParams>)> {
    let mut completed = data.to_dmatrix();
    if data.is_complete() {
        return Ok((completed, None));
    }
    let mut rng = rng_from(seed);
    let idx = resample_indices(data.nrows(), &mut rng);
    let theta = em_fit(&data.select_rows(&idx), &EmInit::Moments, em)?.params;

    // per-pattern conditioner and a factor of its conditional covariance
    let mut cache: HashMap<&Pattern, (crate::gaussian::Conditioner, DMatrix<f64>)> = HashMap::new();
    let mut row = vec![0.0; data.ncols()];
    for i in 0..data.nrows() {
        let pat = data.pattern(i);
        if pat.is_complete() {
            continue;
        }
        if !cache.contains_key(pat) {
            let cond = theta.conditioner(pat)?;
            let factor = psd_factor(cond.cov_given())?;
            cache.insert(pat, (cond, factor));
        }
        let (cond, factor) = &cache[pat];
        row.copy_from_slice(data.row(i));
        cond.fill_row(&mut row);
        let k = cond.missing().len();
        let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let noise = factor * z;
        for (a, &c) in cond.missing().iter().enumerate() {
            completed[(i, c)] = row[c] + noise[a];
        }
    }
    Ok((completed, Some(theta)))
}

fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(l) = cholesky_lower(cov) {
        return Ok(l);
    }
    let repaired = nearest_pd(cov, None)?;
    cholesky_lower(&repaired).ok_or(Error::NotPositiveDefinite)
}

/// Runs `config.num_imputations` imputations with seeds derived from
/// `config.seed`.
pub fn mi_run(data: &PartialMatrix, config: &MiConfig) -> Result<MiResult> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.num_imputations)
        .map(|j| imputation_seed(config.seed, j))
        .collect();
    mi_run_with_seeds(data, &seeds, &config.em)
}

/// Multiple imputation with explicit per-imputation seeds.
pub fn mi_run_with_seeds(data: &PartialMatrix, seeds: &[u64], em: &EmConfig) -> Result<MiResult> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig("num_imputations must be at least 2".into()));
    }
    if data.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    let results: Vec<Result<GaussianParams>> = seeds
        .par_iter()
        .map(|&s| {
            let (completed, _) = impute_once(data, s, em)?;
            moment_params(&completed)
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    let total = seeds.len();
    if failed * 10 > total {
        return Err(Error::UnstableImputation { failed, total });
    }
    let estimate_cloud: Vec<GaussianParams> = results.into_iter().filter_map(|r| r.ok()).collect();
    if estimate_cloud.len() < 2 {
        return Err(Error::UnstableImputation { failed, total });
    }
    let m = data.ncols();
    let stacked: Vec<Vec<f64>> = estimate_cloud.iter().map(|p| p.stacked()).collect();
    let point_estimate = GaussianParams::from_stacked(m, &stats::columnwise_mean(&stacked, stacked_len(m)))?;
    let uncertainty = UncertaintyEstimate {
        per_parameter_sd: stats::columnwise_sd(&stacked, stacked_len(m)),
        method: UncertaintyMethod::ImputationCloudSd,
    };
    Ok(MiResult {
        estimate_cloud,
        point_estimate,
        uncertainty,
    })
}

/// Outcome of one ML-versus-MI comparison on a single amputed sample.
///
/// Point-estimate distances (`ml_dist`, `mi_dist`) are measured against the
/// complete-data estimate of the same sample, i.e. what the estimate would
/// have been without missingness. `ml_truth_dist` / `mi_truth_dist` measure
/// against the supplied generating parameters.
#[derive(Clone, Debug, Serialize)]
pub struct MlMiComparison {
    pub amputation: AmputationReport,
    pub truth: Vec<f64>,
    pub true_estimate: Vec<f64>,
    pub true_uncertainty: Vec<f64>,
    pub ml_estimate: Vec<f64>,
    pub ml_uncertainty: Vec<f64>,
    pub ml_iterations: usize,
    pub mi_estimate: Vec<f64>,
    pub mi_uncertainty: Vec<f64>,
    pub ml_dist: f64,
    pub mi_dist: f64,
    pub ml_truth_dist: f64,
    pub mi_truth_dist: f64,
    pub ml_unc_dist: f64,
    pub mi_unc_dist: f64,
}

impl MlMiComparison {
    /// Signed per-parameter differences `ml - true` and `mi - true`.
    pub fn per_parameter_differences(&self) -> (Vec<f64>, Vec<f64>) {
        let d = |a: &[f64]| a.iter().zip(&self.true_estimate).map(|(x, t)| x - t).collect::<Vec<_>>();
        (d(&self.ml_estimate), d(&self.mi_estimate))
    }
}

/// Amputes `complete` with `mech`, then estimates `(mean, cov)` and its
/// uncertainty three ways: EM with bootstrap SD (ML arm), bootstrap-EM
/// multiple imputation (MI arm), and complete-data moments with bootstrap SD
/// (TRUE arm). Bootstrap arms use `config.num_imputations` resamples and
/// share resample indices.
pub fn compare_ml_mi(
    complete: &DMatrix<f64>,
    mech: &Mechanism,
    truth: &GaussianParams,
    config: &MiConfig,
    seed: u64,
) -> Result<MlMiComparison> {
    config.validate()?;
    if truth.dim() != complete.ncols() {
        return Err(Error::dim("truth does not match the data dimension"));
    }
    let (partial, amputation) = ampute(complete, mech, mix_seed(seed, 0))?;
    let boot_seed = mix_seed(seed, 1);
    let b = config.num_imputations;

    let complete_pm = PartialMatrix::from_complete(complete)?;
    let true_est = moment_params(complete)?.stacked();
    let true_unc = em_uncertainty(&complete_pm, b, boot_seed, &config.em)?.per_parameter_sd;

    let ml = em_fit(&partial, &EmInit::Moments, &config.em)?;
    let ml_unc = em_uncertainty(&partial, b, boot_seed, &config.em)?.per_parameter_sd;

    let mi_cfg = MiConfig {
        seed: mix_seed(seed, 2),
        ..config.clone()
    };
    let mi = mi_run(&partial, &mi_cfg)?;

    let ml_est = ml.params.stacked();
    let mi_est = mi.point_estimate.stacked();
    let truth_stacked = truth.stacked();
    Ok(MlMiComparison {
        amputation,
        ml_dist: stats::max_abs_diff(&ml_est, &true_est),
        mi_dist: stats::max_abs_diff(&mi_est, &true_est),
        ml_truth_dist: stats::max_abs_diff(&ml_est, &truth_stacked),
        mi_truth_dist: stats::max_abs_diff(&mi_est, &truth_stacked),
        ml_unc_dist: stats::max_abs_diff(&ml_unc, &true_unc),
        mi_unc_dist: stats::max_abs_diff(&mi.uncertainty.per_parameter_sd, &true_unc),
        truth: truth_stacked,
        true_estimate: true_est,
        true_uncertainty: true_unc,
        ml_estimate: ml_est,
        ml_uncertainty: ml_unc,
        ml_iterations: ml.iterations,
        mi_estimate: mi_est,
        mi_uncertainty: mi.uncertainty.per_parameter_sd,
    })
}
