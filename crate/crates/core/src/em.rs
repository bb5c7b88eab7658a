//! Maximum likelihood for the multivariate normal under missing data by EM,
//! with bootstrap standard deviations as the uncertainty measure.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{moment_params, nearest_pd, stacked_len, symmetrize, Conditioner, GaussianParams};
use crate::partial::{total_loglik, PartialMatrix};
use crate::seeding::{resample_indices, stream_rng};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the observed-data mean-loglikelihood
    /// falls below this.
    pub tol: f64,
    /// Added to the covariance diagonal after every M-step.
    pub ridge: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 1000,
            tol: 1e-8,
            ridge: 0.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.ridge.is_nan() || self.ridge < 0.0 {
            return Err(Error::InvalidConfig("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

/// Starting point for [`em_fit`].
#[derive(Clone, Debug, Default)]
pub enum EmInit {
    /// Available-case means with a diagonal of available-case variances.
    #[default]
    Moments,
    Params(GaussianParams),
}

#[derive(Clone, Debug)]
pub struct EmResult {
    pub params: GaussianParams,
    /// Observed-data mean-loglikelihood at the starting point and after
    /// every iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmResult {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    /// SD of estimates over nonparametric bootstrap resamples.
    BootstrapSd,
    /// SD of per-imputation estimates over a multiple-imputation cloud.
    ImputationCloudSd,
}

/// Standard deviations over the stacked parameter vector (mean, then the
/// covariance lower triangle row by row).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub per_parameter_sd: Vec<f64>,
    pub method: UncertaintyMethod,
}

/// Available-case starting values.
pub fn available_case_init(data: &PartialMatrix) -> Result<GaussianParams> {
    let m = data.ncols();
    let mut sum = vec![0.0; m];
    let mut count = vec![0usize; m];
    for i in 0..data.nrows() {
        for (j, (&v, &obs)) in data.row(i).iter().zip(data.pattern(i).iter()).enumerate() {
            if obs {
                sum[j] += v;
                count[j] += 1;
            }
        }
    }
    if let Some(col) = count.iter().position(|&c| c == 0) {
        return Err(Error::UnidentifiedColumn(col));
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut ss = vec![0.0; m];
    for i in 0..data.nrows() {
        for (j, (&v, &obs)) in data.row(i).iter().zip(data.pattern(i).iter()).enumerate() {
            if obs {
                ss[j] += (v - mean[j]).powi(2);
            }
        }
    }
    let var: Vec<f64> = ss.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    GaussianParams::repaired(DVector::from_vec(mean), DMatrix::from_diagonal(&DVector::from_vec(var)))
}

struct Group<'a> {
    rows: &'a [usize],
    complete: bool,
}

/// Expected sufficient statistics and observed-data loglik at one parameter
/// value.
struct EStep {
    total_loglik: f64,
    filled: DMatrix<f64>,
    // sum over rows of the conditional covariance, embedded in m×m
    cond_cov_sum: DMatrix<f64>,
}

fn e_step(params: &GaussianParams, data: &PartialMatrix, groups: &[(crate::missingness::Pattern, Vec<usize>)]) -> Result<EStep> {
    let (n, m) = (data.nrows(), data.ncols());
    let total_loglik = total_loglik(params, data)?;
    let mut filled = DMatrix::zeros(n, m);
    let mut cond_cov_sum = DMatrix::zeros(m, m);
    let mut row = vec![0.0; m];
    for (pattern, rows) in groups {
        let g = Group {
            rows,
            complete: pattern.is_complete(),
        };
        let cond: Option<Conditioner> = if g.complete {
            None
        } else {
            Some(params.conditioner(pattern)?)
        };
        for &i in g.rows {
            row.copy_from_slice(data.row(i));
            if let Some(c) = &cond {
                c.fill_row(&mut row);
            }
            for (j, v) in row.iter().enumerate() {
                filled[(i, j)] = *v;
            }
        }
        if let Some(c) = &cond {
            let k = g.rows.len() as f64;
            let mis = c.missing();
            for (a, &ia) in mis.iter().enumerate() {
                for (b, &ib) in mis.iter().enumerate() {
                    cond_cov_sum[(ia, ib)] += k * c.cov_given()[(a, b)];
                }
            }
        }
    }
    Ok(EStep {
        total_loglik,
        filled,
        cond_cov_sum,
    })
}

fn m_step(stats: &EStep, ridge: f64) -> Result<GaussianParams> {
    let n = stats.filled.nrows() as f64;
    let m = stats.filled.ncols();
    let mean = stats.filled.row_sum().transpose() / n;
    let mut centered = stats.filled.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let mut cov = (centered.tr_mul(&centered) + &stats.cond_cov_sum) / n;
    if ridge > 0.0 {
        cov += DMatrix::identity(m, m) * ridge;
    }
    symmetrize(&mut cov);
    let cov = nearest_pd(&cov, None)?;
    GaussianParams::new(mean, cov)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

/// Fits `(mean, cov)` to partially observed rows by EM.
///
/// Complete data short-circuits to the sample moments (denominator N) in a
/// single iteration.
pub fn em_fit(data: &PartialMatrix, init: &EmInit, config: &EmConfig) -> Result<EmResult> {
    config.validate()?;
    if data.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if let Some(col) = data.observed_per_column().iter().position(|&c| c == 0) {
        return Err(Error::UnidentifiedColumn(col));
    }
    let start = match init {
        EmInit::Moments => available_case_init(data)?,
        EmInit::Params(p) => {
            if p.dim() != data.ncols() {
                return Err(Error::dim("initial params do not match the data dimension"));
            }
            p.clone()
        }
    };
    let n = data.nrows() as f64;
    let check = |ll: f64| {
        if ll.is_finite() {
            Ok(ll)
        } else {
            Err(Error::NumericalFailure("observed-data loglik is not finite".into()))
        }
    };

    if data.is_complete() {
        let ll0 = check(total_loglik(&start, data)? / n)?;
        let mut params = moment_params(&data.to_dmatrix())?;
        if config.ridge > 0.0 {
            let m = data.ncols();
            params = GaussianParams::repaired(params.mean().clone(), params.cov() + DMatrix::identity(m, m) * config.ridge)?;
        }
        let ll1 = check(total_loglik(&params, data)? / n)?;
        return Ok(EmResult {
            params,
            loglik_trace: vec![ll0, ll1],
            iterations: 1,
            converged: true,
        });
    }

    let groups: Vec<_> = data.pattern_groups().into_iter().collect();
    let mut params = start;
    let mut stats = e_step(&params, data, &groups)?;
    let mut trace = vec![check(stats.total_loglik / n)?];
    for it in 1..=config.max_iters {
        params = m_step(&stats, config.ridge)?;
        stats = e_step(&params, data, &groups)?;
        let ll = check(stats.total_loglik / n)?;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if relative_change(ll, prev) < config.tol {
            return Ok(EmResult {
                params,
                loglik_trace: trace,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(EmResult {
        params,
        loglik_trace: trace,
        iterations: config.max_iters,
        converged: false,
    })
}

/// One EM iteration (E-step then M-step) from `params`. At a fixed point of
/// EM this reproduces its input.
pub fn em_step(data: &PartialMatrix, params: &GaussianParams, config: &EmConfig) -> Result<GaussianParams> {
    let groups: Vec<_> = data.pattern_groups().into_iter().collect();
    let stats = e_step(params, data, &groups)?;
    m_step(&stats, config.ridge)
}

/// Row indices of resample `j` used by [`em_uncertainty`].
pub fn uncertainty_resample_indices(n: usize, seed: u64, j: usize) -> Vec<usize> {
    resample_indices(n, &mut stream_rng(seed, j as u64))
}

/// Nonparametric bootstrap SD of the EM estimate: `resamples` row
/// resamples, each refit from available-case starting values.
pub fn em_uncertainty(data: &PartialMatrix, resamples: usize, seed: u64, config: &EmConfig) -> Result<UncertaintyEstimate> {
    if resamples < 2 {
        return Err(Error::InvalidConfig("bootstrap uncertainty needs at least 2 resamples".into()));
    }
    if data.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    config.validate()?;
    let n = data.nrows();
    let fits: Vec<Result<Vec<f64>>> = (0..resamples)
        .into_par_iter()
        .map(|j| {
            let sub = data.select_rows(&uncertainty_resample_indices(n, seed, j));
            em_fit(&sub, &EmInit::Moments, config).map(|r| r.params.stacked())
        })
        .collect();
    let failed = fits.iter().filter(|f| f.is_err()).count();
    if failed * 10 > resamples {
        return Err(Error::UnstableBootstrap {
            failed,
            total: resamples,
        });
    }
    let ok: Vec<Vec<f64>> = fits.into_iter().filter_map(|f| f.ok()).collect();
    if ok.len() < 2 {
        return Err(Error::UnstableBootstrap {
            failed,
            total: resamples,
        });
    }
    Ok(UncertaintyEstimate {
        per_parameter_sd: stats::columnwise_sd(&ok, stacked_len(data.ncols())),
        method: UncertaintyMethod::BootstrapSd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_moments;
    use crate::missingness::{ampute, Mechanism, Pattern};
    use crate::seeding::rng_from;
    use approx::assert_abs_diff_eq;

    fn truth() -> GaussianParams {
        GaussianParams::from_slices(&[0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]).unwrap()
    }

    #[test]
    fn complete_data_one_iteration() {
        let data = truth().sample(200, &mut rng_from(1));
        let partial = PartialMatrix::from_complete(&data).unwrap();
        let fit = em_fit(&partial, &EmInit::Moments, &EmConfig::default()).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
        let (mean, cov) = sample_moments(&data).unwrap();
        assert_eq!(fit.params.mean(), &mean);
        assert_eq!(fit.params.cov(), &cov);
    }

    #[test]
    fn trace_is_monotone() {
        let data = truth().sample(300, &mut rng_from(2));
        let (partial, _) = ampute(&data, &Mechanism::mar(1, 0, 0.4), 3).unwrap();
        let fit = em_fit(&partial, &EmInit::Moments, &EmConfig::default()).unwrap();
        assert!(fit.converged);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{:?}", w);
        }
    }

    #[test]
    fn unidentified_column() {
        let data = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let mask = vec![Pattern::missing_at(2, &[1]); 2];
        let partial = PartialMatrix::from_dmatrix(&data, mask).unwrap();
        assert!(matches!(
            em_fit(&partial, &EmInit::Moments, &EmConfig::default()),
            Err(Error::UnidentifiedColumn(1))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = EmConfig {
            max_iters: 0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EmConfig {
            tol: 0.0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EmConfig {
            ridge: -1.0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mcar_recovers_truth() {
        let data = truth().sample(2000, &mut rng_from(5));
        let (partial, _) = ampute(&data, &Mechanism::mcar(1, 0.3), 6).unwrap();
        let fit = em_fit(&partial, &EmInit::Moments, &EmConfig::default()).unwrap();
        let gap = stats::max_abs_diff(&fit.params.stacked(), &truth().stacked());
        assert!(gap < 0.1, "max-abs gap {gap}");
        let complete_mle = moment_params(&data).unwrap();
        let gap = stats::max_abs_diff(&fit.params.stacked(), &complete_mle.stacked());
        assert!(gap < 0.1, "gap to complete-data MLE {gap}");
    }

    #[test]
    fn fixed_point_and_self_consistency() {
        let data = truth().sample(400, &mut rng_from(7));
        let (partial, _) = ampute(&data, &Mechanism::mar(1, 0, 0.3), 8).unwrap();
        let cfg = EmConfig {
            tol: 1e-12,
            ..EmConfig::default()
        };
        let fit = em_fit(&partial, &EmInit::Moments, &cfg).unwrap();
        let again = em_fit(&partial, &EmInit::Params(fit.params.clone()), &cfg).unwrap();
        let gap = stats::max_abs_diff(&again.params.stacked(), &fit.params.stacked());
        // the stopping rule is on loglik, so parameters settle to ~sqrt(tol)
        let bound = 10.0 * cfg.tol.sqrt();
        assert!(gap < bound, "refit moved by {gap}");
        let stepped = em_step(&partial, &fit.params, &cfg).unwrap();
        let gap = stats::max_abs_diff(&stepped.stacked(), &fit.params.stacked());
        assert!(gap < bound, "M-step moved by {gap}");
    }

    #[test]
    fn degenerate_bootstrap_has_zero_sd() {
        let data = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let partial = PartialMatrix::from_complete(&data).unwrap();
        let u = em_uncertainty(&partial, 2, 1, &EmConfig::default()).unwrap();
        assert_eq!(u.per_parameter_sd.len(), 5);
        assert!(u.per_parameter_sd.iter().all(|&s| s == 0.0));
        assert!(matches!(
            em_uncertainty(&partial, 1, 1, &EmConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn bootstrap_sd_of_mean_matches_classical_se() {
        let p = GaussianParams::from_slices(&[2.0], &[4.0]).unwrap();
        let data = p.sample(400, &mut rng_from(9));
        let partial = PartialMatrix::from_complete(&data).unwrap();
        let u = em_uncertainty(&partial, 400, 10, &EmConfig::default()).unwrap();
        let (_, cov) = sample_moments(&data).unwrap();
        let se = (cov[(0, 0)] / 400.0).sqrt();
        assert!((u.per_parameter_sd[0] / se - 1.0).abs() < 0.15);
    }

    #[test]
    fn ridge_is_added() {
        let data = truth().sample(100, &mut rng_from(11));
        let partial = PartialMatrix::from_complete(&data).unwrap();
        let cfg = EmConfig {
            ridge: 0.5,
            ..EmConfig::default()
        };
        let fit = em_fit(&partial, &EmInit::Moments, &cfg).unwrap();
        let (_, cov) = sample_moments(&data).unwrap();
        assert_abs_diff_eq!(fit.params.cov()[(0, 0)], cov[(0, 0)] + 0.5, epsilon = 1e-12);
    }
}
