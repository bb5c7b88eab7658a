//! Observed-data likelihood of partially observed Gaussian data, bootstrap
//! parameter clouds, and the sup-difference statistic between partial and
//! complete mean-loglikelihoods.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{moment_params, GaussianParams, ObservedSubmodel};
use crate::missingness::Pattern;
use crate::seeding::{resample_indices, stream_rng};

/// N×m data with an observation mask. Masked cells hold `NaN` and are never
/// read; every row keeps at least one observed cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialMatrix {
    n: usize,
    m: usize,
    // row-major
    values: Vec<f64>,
    mask: Vec<Pattern>,
}

impl PartialMatrix {
    pub fn new(n: usize, m: usize, mut values: Vec<f64>, mask: Vec<Pattern>) -> Result<Self> {
        if values.len() != n * m {
            return Err(Error::dim(format!("{} values for a {n}x{m} matrix", values.len())));
        }
        if mask.len() != n {
            return Err(Error::dim(format!("{} mask rows for {n} data rows", mask.len())));
        }
        for (i, p) in mask.iter().enumerate() {
            if p.len() != m {
                return Err(Error::dim(format!("mask row {i} has length {}", p.len())));
            }
            if !p.has_observed() {
                return Err(Error::EmptyPattern);
            }
            for j in 0..m {
                let v = &mut values[i * m + j];
                if p[j] {
                    if !v.is_finite() {
                        return Err(Error::NumericalFailure(format!(
                            "observed cell ({i}, {j}) is not finite"
                        )));
                    }
                } else {
                    *v = f64::NAN;
                }
            }
        }
        Ok(PartialMatrix { n, m, values, mask })
    }

    pub fn from_dmatrix(values: &DMatrix<f64>, mask: Vec<Pattern>) -> Result<Self> {
        let (n, m) = values.shape();
        let row_major: Vec<f64> = (0..n).flat_map(|i| (0..m).map(move |j| values[(i, j)])).collect();
        PartialMatrix::new(n, m, row_major, mask)
    }

    pub fn from_complete(values: &DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::AlreadyPartial);
        }
        let mask = vec![Pattern::all_observed(values.ncols()); values.nrows()];
        PartialMatrix::from_dmatrix(values, mask)
    }

    /// Treats `NaN` cells as missing.
    pub fn from_nan_encoded(values: &DMatrix<f64>) -> Result<Self> {
        let mask = values
            .row_iter()
            .map(|r| Pattern::new(r.iter().map(|v| !v.is_nan()).collect()))
            .collect();
        PartialMatrix::from_dmatrix(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn pattern(&self, i: usize) -> &Pattern {
        &self.mask[i]
    }

    pub fn mask(&self) -> &[Pattern] {
        &self.mask
    }

    /// Row-major values with `NaN` in masked cells.
    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.m, &self.values)
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|p| p.is_complete())
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().map(|p| self.m - p.observed_count()).sum()
    }

    pub fn observed_per_column(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m];
        for p in &self.mask {
            for (c, &b) in counts.iter_mut().zip(p.iter()) {
                if b {
                    *c += 1;
                }
            }
        }
        counts
    }

    pub fn select_rows(&self, rows: &[usize]) -> PartialMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.m);
        let mut mask = Vec::with_capacity(rows.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
            mask.push(self.mask[r].clone());
        }
        PartialMatrix {
            n: rows.len(),
            m: self.m,
            values,
            mask,
        }
    }

    /// Row indices grouped by pattern, in pattern order.
    pub fn pattern_groups(&self) -> BTreeMap<Pattern, Vec<usize>> {
        let mut groups: BTreeMap<Pattern, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.mask.iter().enumerate() {
            groups.entry(p.clone()).or_default().push(i);
        }
        groups
    }
}

/// Log-likelihood of one record ignoring the missingness mechanism: the
/// joint density integrated over the missing coordinates, i.e. the marginal
/// density of the observed subvector.
pub fn record_loglik(params: &GaussianParams, row_values: &[f64], row_mask: &Pattern) -> Result<f64> {
    if row_values.len() != params.dim() || row_mask.len() != params.dim() {
        return Err(Error::dim("row and mask must match the parameter dimension"));
    }
    if row_mask.is_complete() {
        return params.log_density(row_values);
    }
    let sub = params.marginal(row_mask)?;
    let mut scratch = Vec::with_capacity(params.dim());
    Ok(sub.log_density_row(row_values, &mut scratch))
}

/// Mean of [`record_loglik`] over all rows.
pub fn mean_loglik(params: &GaussianParams, data: &PartialMatrix) -> Result<f64> {
    Ok(total_loglik(params, data)? / data.nrows() as f64)
}

pub(crate) fn total_loglik(params: &GaussianParams, data: &PartialMatrix) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if data.ncols() != params.dim() {
        return Err(Error::dim(format!(
            "data has {} columns but m = {}",
            data.ncols(),
            params.dim()
        )));
    }
    let mut submodels: HashMap<&Pattern, ObservedSubmodel> = HashMap::new();
    let mut scratch = Vec::with_capacity(params.dim());
    let mut total = 0.0;
    for i in 0..data.nrows() {
        let pat = data.pattern(i);
        let row = data.row(i);
        total += if pat.is_complete() {
            params.log_density(row)?
        } else {
            if !submodels.contains_key(pat) {
                submodels.insert(pat, params.marginal(pat)?);
            }
            submodels[pat].log_density_row(row, &mut scratch)
        };
    }
    Ok(total)
}

/// Finite set of parameter values standing in for a compact parameter set.
#[derive(Clone, Debug)]
pub struct ParameterCloud {
    pub points: Vec<GaussianParams>,
    pub source_size: usize,
    pub resamples: usize,
}

/// `resamples` bootstrap resamples of the rows of `complete_sample`, each
/// summarized by its repaired sample moments (denominator N).
pub fn bootstrap_cloud(complete_sample: &DMatrix<f64>, resamples: usize, seed: u64) -> Result<ParameterCloud> {
    let n = complete_sample.nrows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if resamples == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
    }
    if complete_sample.iter().any(|v| v.is_nan()) {
        return Err(Error::AlreadyPartial);
    }
    let points = (0..resamples)
        .into_par_iter()
        .map(|j| {
            let idx = cloud_resample_indices(n, seed, j);
            moment_params(&complete_sample.select_rows(&idx))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParameterCloud {
        points,
        source_size: n,
        resamples,
    })
}

/// Row indices used for resample `j` of [`bootstrap_cloud`].
pub fn cloud_resample_indices(n: usize, seed: u64, j: usize) -> Vec<usize> {
    resample_indices(n, &mut stream_rng(seed, j as u64))
}

/// Largest absolute gap between partial- and complete-data
/// mean-loglikelihoods over a parameter cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupDiff {
    pub sup_abs_diff: f64,
    /// `ln(sup_abs_diff)`; `-inf` when the sup is zero.
    pub log_sup: f64,
    pub argmax_point: usize,
}

/// `mean_loglik(theta, partial) - mean_loglik(theta, complete)` for every
/// cloud point.
pub fn difference_profile(
    cloud: &ParameterCloud,
    partial: &PartialMatrix,
    complete: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if partial.nrows() != complete.nrows() || partial.ncols() != complete.ncols() {
        return Err(Error::dim(format!(
            "partial is {}x{} but complete is {}x{}",
            partial.nrows(),
            partial.ncols(),
            complete.nrows(),
            complete.ncols()
        )));
    }
    let complete = PartialMatrix::from_complete(complete)?;
    cloud
        .points
        .par_iter()
        .map(|theta| Ok(mean_loglik(theta, partial)? - mean_loglik(theta, &complete)?))
        .collect()
}

pub fn sup_difference(cloud: &ParameterCloud, partial: &PartialMatrix, complete: &DMatrix<f64>) -> Result<SupDiff> {
    if cloud.points.is_empty() {
        return Err(Error::EmptyData);
    }
    let diffs = difference_profile(cloud, partial, complete)?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, d) in diffs.iter().enumerate() {
        let a = d.abs();
        if a.is_nan() {
            return Err(Error::NumericalFailure(format!("difference at cloud point {i} is NaN")));
        }
        if a > best.1 {
            best = (i, a);
        }
    }
    Ok(SupDiff {
        sup_abs_diff: best.1,
        log_sup: best.1.ln(),
        argmax_point: best.0,
    })
}
