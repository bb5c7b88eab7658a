//! Exact and Monte Carlo checks of the two identities behind the
//! convergence of partial-data mean-loglikelihoods:
//!
//! * the expectation of the observed-data loglikelihood over a pattern law
//!   tends to the complete-data loglikelihood as the law concentrates on
//!   the all-observed pattern, and
//! * the average mechanism error `record_loglik(amputed) - log_density(full)`
//!   under MAR does not depend on how missingness is driven, only on how
//!   much of it there is.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::missingness::{ampute, Mechanism, Pattern};
use crate::partial::{mean_loglik, record_loglik, PartialMatrix};
use crate::seeding::{mix_seed, stream_rng};
use crate::stats;

pub const MAX_MODEL_DIM: usize = 3;
pub const PROB_SUM_TOL: f64 = 1e-12;

/// A finitely supported pattern law on `{0,1}^m`, `m <= 3`, optionally
/// varying with the data point on a finite set of tabulated points.
#[derive(Clone, Debug)]
pub struct DiscreteMissingnessModel {
    dim: usize,
    default_law: BTreeMap<Pattern, f64>,
    tabulated: Vec<(Vec<f64>, BTreeMap<Pattern, f64>)>,
}

fn validate_law(dim: usize, law: &BTreeMap<Pattern, f64>) -> Result<()> {
    let mut total = 0.0;
    for (p, &prob) in law {
        if p.len() != dim {
            return Err(Error::InvalidModel(format!("pattern {p} has wrong length")));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidModel(format!("probability {prob} for {p}")));
        }
        total += prob;
    }
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidModel(format!("probabilities sum to {total}")));
    }
    Ok(())
}

impl DiscreteMissingnessModel {
    pub fn constant(dim: usize, law: BTreeMap<Pattern, f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_MODEL_DIM {
            return Err(Error::InvalidModel(format!("dimension {dim} outside 1..={MAX_MODEL_DIM}")));
        }
        validate_law(dim, &law)?;
        Ok(DiscreteMissingnessModel {
            dim,
            default_law: law,
            tabulated: Vec::new(),
        })
    }

    /// Overrides the law at one data point.
    pub fn with_point_law(mut self, point: Vec<f64>, law: BTreeMap<Pattern, f64>) -> Result<Self> {
        if point.len() != self.dim {
            return Err(Error::InvalidModel("tabulated point has wrong length".into()));
        }
        validate_law(self.dim, &law)?;
        self.tabulated.push((point, law));
        Ok(self)
    }

    pub fn complete_point_mass(dim: usize) -> Result<Self> {
        Self::constant(dim, BTreeMap::from([(Pattern::all_observed(dim), 1.0)]))
    }

    /// Mass `1 - eps` on the all-observed pattern and `eps` on `alt`.
    pub fn two_point(dim: usize, alt: Pattern, eps: f64) -> Result<Self> {
        if alt.is_complete() {
            return Err(Error::InvalidModel("alternative pattern must have a missing coordinate".into()));
        }
        Self::constant(dim, BTreeMap::from([(Pattern::all_observed(dim), 1.0 - eps), (alt, eps)]))
    }

    /// Every coordinate independently missing with probability `psi`.
    pub fn independent_mcar(dim: usize, psi: f64) -> Result<Self> {
        let mut law = BTreeMap::new();
        for code in 0..(1usize << dim) {
            let bits: Vec<bool> = (0..dim).map(|j| code & (1 << j) != 0).collect();
            let missing = bits.iter().filter(|b| !**b).count();
            let p = psi.powi(missing as i32) * (1.0 - psi).powi((dim - missing) as i32);
            law.insert(Pattern::new(bits), p);
        }
        Self::constant(dim, law)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn law_at(&self, x: &[f64]) -> &BTreeMap<Pattern, f64> {
        self.tabulated
            .iter()
            .find(|(p, _)| p.as_slice() == x)
            .map(|(_, law)| law)
            .unwrap_or(&self.default_law)
    }
}

/// Observed-data loglik of `x` under pattern `pattern`; the empty pattern
/// integrates everything out and contributes `ln 1 = 0`.
fn pattern_loglik(theta: &GaussianParams, x: &[f64], pattern: &Pattern) -> Result<f64> {
    if pattern.has_observed() {
        record_loglik(theta, x, pattern)
    } else {
        Ok(0.0)
    }
}

/// `E_M[f(O(x, M) | theta)] - f(x | theta)`, accumulated as deviations from
/// the complete term so that small off-complete masses do not cancel.
pub fn expectation_gap(model: &DiscreteMissingnessModel, theta: &GaussianParams, x: &[f64]) -> Result<f64> {
    let full = theta.log_density(x)?;
    let mut gap = 0.0;
    for (p, &prob) in model.law_at(x) {
        if p.is_complete() || prob == 0.0 {
            continue;
        }
        gap += prob * (pattern_loglik(theta, x, p)? - full);
    }
    Ok(gap)
}

/// `E_M[f(O(x, M) | theta)]` under the model's law at `x`.
pub fn pattern_expectation(model: &DiscreteMissingnessModel, theta: &GaussianParams, x: &[f64]) -> Result<f64> {
    Ok(theta.log_density(x)? + expectation_gap(model, theta, x)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Row {
    pub k: usize,
    /// Probability of patterns other than all-observed at `x`.
    pub off_complete_mass: f64,
    pub max_gap: f64,
    /// Index into `[params] ++ theta_grid`.
    pub argmax_theta: usize,
}

/// For every model in the sequence and every parameter in
/// `[params] ++ theta_grid`, the exact gap between the pattern expectation
/// of the observed-data loglik and the complete-data loglik at `x`; reports
/// the largest gap per model.
pub fn check_lemma1(
    models: &[DiscreteMissingnessModel],
    params: &GaussianParams,
    x: &[f64],
    theta_grid: &[GaussianParams],
) -> Result<Vec<Lemma1Row>> {
    let thetas: Vec<&GaussianParams> = std::iter::once(params).chain(theta_grid.iter()).collect();
    for t in &thetas {
        if t.dim() != x.len() {
            return Err(Error::dim("parameter dimension does not match x"));
        }
    }
    models
        .iter()
        .enumerate()
        .map(|(k, model)| {
            if model.dim() != x.len() {
                return Err(Error::InvalidModel("model dimension does not match x".into()));
            }
            let gaps = thetas
                .par_iter()
                .map(|t| expectation_gap(model, t, x).map(f64::abs))
                .collect::<Result<Vec<_>>>()?;
            let (argmax_theta, max_gap) = gaps
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &g)| if g > acc.1 { (i, g) } else { acc });
            let off_complete_mass = model
                .law_at(x)
                .iter()
                .filter(|(p, _)| !p.is_complete())
                .map(|(_, q)| q)
                .sum();
            Ok(Lemma1Row {
                k: k + 1,
                off_complete_mass,
                max_gap,
                argmax_theta,
            })
        })
        .collect()
}

/// Models with off-complete mass `2^-k` on `alt`, `k = 1..=k_max`.
pub fn geometric_schedule(dim: usize, alt: &Pattern, k_max: usize) -> Result<Vec<DiscreteMissingnessModel>> {
    (1..=k_max)
        .map(|k| DiscreteMissingnessModel::two_point(dim, alt.clone(), 0.5f64.powi(k as i32)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasRow {
    pub theta_index: usize,
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of the mechanism error
/// `mean_i [record_loglik(theta, amputed_i) - log_density(theta, x_i)]`
/// with its standard error over `replicates` samples of size `n` drawn from
/// `truth`.
pub fn check_theorem2_expectation(
    mech: &Mechanism,
    truth: &GaussianParams,
    theta_grid: &[GaussianParams],
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<BiasRow>> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    if theta_grid.iter().any(|t| t.dim() != truth.dim()) {
        return Err(Error::dim("theta grid dimension does not match truth"));
    }
    let per_rep: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let complete = truth.sample(n, &mut stream_rng(seed, r as u64));
            let (partial, _) = ampute(&complete, mech, mix_seed(seed, r as u64))?;
            let full = PartialMatrix::from_complete(&complete)?;
            theta_grid
                .iter()
                .map(|t| Ok(mean_loglik(t, &partial)? - mean_loglik(t, &full)?))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..theta_grid.len())
        .map(|i| {
            let vals: Vec<f64> = per_rep.iter().map(|v| v[i]).collect();
            BiasRow {
                theta_index: i,
                estimate: stats::mean(&vals),
                std_error: stats::sd(&vals) / (replicates as f64).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> GaussianParams {
        GaussianParams::from_slices(&[0.2, -0.4], &[1.5, 0.6, 0.6, 0.8]).unwrap()
    }

    #[test]
    fn point_mass_gap_is_zero() {
        let model = DiscreteMissingnessModel::complete_point_mass(2).unwrap();
        let grid = vec![GaussianParams::standard(2), params()];
        let rows = check_lemma1(&[model], &params(), &[0.3, 1.1], &grid).unwrap();
        assert_eq!(rows[0].max_gap, 0.0);
    }

    #[test]
    fn two_point_gap_formula() {
        let x = [0.3, 1.1];
        let alt = Pattern::new(vec![true, false]);
        let eps = 0.125;
        let model = DiscreteMissingnessModel::two_point(2, alt.clone(), eps).unwrap();
        let theta = params();
        let expect = eps * (record_loglik(&theta, &x, &alt).unwrap() - theta.log_density(&x).unwrap()).abs();
        let rows = check_lemma1(&[model], &theta, &x, &[]).unwrap();
        assert_abs_diff_eq!(rows[0].max_gap, expect, epsilon = 1e-15);
    }

    #[test]
    fn mcar_expectation_is_weighted_mixture() {
        let psi = 0.3;
        let model = DiscreteMissingnessModel::independent_mcar(2, psi).unwrap();
        let theta = params();
        let x = [1.0, -0.2];
        let full = theta.log_density(&x).unwrap();
        let only0 = record_loglik(&theta, &x, &Pattern::new(vec![true, false])).unwrap();
        let only1 = record_loglik(&theta, &x, &Pattern::new(vec![false, true])).unwrap();
        let direct = (1.0 - psi) * (1.0 - psi) * full + (1.0 - psi) * psi * (only0 + only1);
        assert_abs_diff_eq!(pattern_expectation(&model, &theta, &x).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn invalid_models() {
        let bad = BTreeMap::from([(Pattern::all_observed(2), 0.7)]);
        assert!(DiscreteMissingnessModel::constant(2, bad).is_err());
        assert!(DiscreteMissingnessModel::complete_point_mass(4).is_err());
        assert!(DiscreteMissingnessModel::two_point(2, Pattern::all_observed(2), 0.1).is_err());
    }

    #[test]
    fn tabulated_law_overrides() {
        let model = DiscreteMissingnessModel::complete_point_mass(2)
            .unwrap()
            .with_point_law(vec![1.0, 1.0], BTreeMap::from([(Pattern::new(vec![false, true]), 1.0)]))
            .unwrap();
        let theta = params();
        assert_eq!(expectation_gap(&model, &theta, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(expectation_gap(&model, &theta, &[1.0, 1.0]).unwrap() != 0.0);
    }

    #[test]
    fn zero_psi_bias_is_exactly_zero() {
        let truth = params();
        let grid = vec![truth.clone(), GaussianParams::standard(2)];
        let rows = check_theorem2_expectation(&Mechanism::mar(1, 0, 0.0), &truth, &grid, 50, 4, 1).unwrap();
        assert!(rows.iter().all(|r| r.estimate == 0.0 && r.std_error == 0.0));
    }
}
