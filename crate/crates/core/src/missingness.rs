//! Missingness mechanisms and amputation of complete data.
//!
//! A mechanism deletes a single target column record by record with a
//! Bernoulli draw. The per-record deletion probability is either a constant
//! `psi` or `sigmoid(a + b * z)` where `z` is the standardized driver value
//! and the intercept `a` is calibrated so the probabilities average to `psi`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::partial::PartialMatrix;
use crate::seeding::rng_from;

/// Default magnitude of the logistic slope on the standardized driver.
pub const DEFAULT_SLOPE_MAGNITUDE: f64 = 2.0;
/// Bisection bracket for the logistic intercept.
pub const INTERCEPT_BRACKET: (f64, f64) = (-30.0, 30.0);
/// Required accuracy of the calibrated mean deletion probability.
pub const CALIBRATION_TOL: f64 = 1e-6;

/// Observation pattern of one record; `true` marks an observed coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern(Vec<bool>);

impl Pattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Pattern(bits)
    }

    pub fn all_observed(m: usize) -> Self {
        Pattern(vec![true; m])
    }

    /// All observed except the listed columns.
    pub fn missing_at(m: usize, missing: &[usize]) -> Self {
        let mut bits = vec![true; m];
        for &c in missing {
            bits[c] = false;
        }
        Pattern(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn observed_count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(|b| *b)
    }

    pub fn has_observed(&self) -> bool {
        self.0.iter().any(|b| *b)
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }
}

impl std::ops::Deref for Pattern {
    type Target = [bool];

    fn deref(&self) -> &[bool] {
        &self.0
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::InvalidModel(format!("bad pattern character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Pattern)
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MechanismKind {
    Mcar,
    Mar,
    Mnar,
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::Mcar => "MCAR",
            MechanismKind::Mar => "MAR",
            MechanismKind::Mnar => "MNAR",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    ConstantRate,
    LogisticInDriver,
}

/// A single-column Bernoulli missingness mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub kind: MechanismKind,
    /// Column whose entries are deleted.
    pub target_col: usize,
    /// Column driving the deletion probability. Ignored for MCAR; must equal
    /// `target_col` for MNAR.
    pub driver_col: usize,
    /// Target marginal deletion rate.
    pub psi: f64,
    pub link: Link,
    /// Logistic slope on the standardized driver. Negative means low driver
    /// values are deleted more often.
    pub slope: f64,
}

impl Mechanism {
    pub fn mcar(target_col: usize, psi: f64) -> Self {
        Mechanism {
            kind: MechanismKind::Mcar,
            target_col,
            driver_col: target_col,
            psi,
            link: Link::ConstantRate,
            slope: 0.0,
        }
    }

    /// Low values of the driver make the target more likely to be missing.
    pub fn mar(target_col: usize, driver_col: usize, psi: f64) -> Self {
        Mechanism {
            kind: MechanismKind::Mar,
            target_col,
            driver_col,
            psi,
            link: Link::LogisticInDriver,
            slope: -DEFAULT_SLOPE_MAGNITUDE,
        }
    }

    /// High values of the target make it more likely to be missing.
    pub fn mnar(target_col: usize, psi: f64) -> Self {
        Mechanism {
            kind: MechanismKind::Mnar,
            target_col,
            driver_col: target_col,
            psi,
            link: Link::LogisticInDriver,
            slope: DEFAULT_SLOPE_MAGNITUDE,
        }
    }

    /// Default mechanism of `kind` with the standard link and slope sign.
    pub fn of_kind(kind: MechanismKind, target_col: usize, driver_col: usize, psi: f64) -> Self {
        match kind {
            MechanismKind::Mcar => Mechanism::mcar(target_col, psi),
            MechanismKind::Mar => Mechanism::mar(target_col, driver_col, psi),
            MechanismKind::Mnar => Mechanism::mnar(target_col, psi),
        }
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_psi(mut self, psi: f64) -> Self {
        self.psi = psi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::InvalidMechanism(format!("psi = {} outside [0, 1]", self.psi)));
        }
        if !self.slope.is_finite() {
            return Err(Error::InvalidMechanism("slope must be finite".into()));
        }
        match self.kind {
            MechanismKind::Mcar if self.link != Link::ConstantRate => Err(Error::InvalidMechanism(
                "MCAR requires the constant-rate link".into(),
            )),
            MechanismKind::Mar if self.driver_col == self.target_col => Err(Error::InvalidMechanism(
                "MAR requires driver_col != target_col".into(),
            )),
            MechanismKind::Mnar if self.driver_col != self.target_col => Err(Error::InvalidMechanism(
                "MNAR requires driver_col == target_col".into(),
            )),
            _ => Ok(()),
        }
    }

    fn validate_for(&self, m: usize) -> Result<()> {
        self.validate()?;
        if self.target_col >= m || (self.kind != MechanismKind::Mcar && self.driver_col >= m) {
            return Err(Error::InvalidMechanism(format!(
                "column index out of range for m = {m}"
            )));
        }
        Ok(())
    }

    /// Whether the deletion probability depends only on always-observed
    /// coordinates.
    pub fn is_mar(&self) -> bool {
        matches!(self.kind, MechanismKind::Mcar | MechanismKind::Mar)
    }
}

/// Free-function form of [`Mechanism::is_mar`].
pub fn is_mar(mech: &Mechanism) -> bool {
    mech.is_mar()
}

/// Diagnostics for one amputation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmputationReport {
    /// Fraction of target-column entries removed.
    pub achieved_rate: f64,
    pub pattern_counts: BTreeMap<Pattern, usize>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standardizes with the population standard deviation. Returns `None`
/// when the values are constant.
fn standardize(values: &[f64]) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        Some(values.iter().map(|v| (v - mean) / sd).collect())
    } else {
        None
    }
}

fn mean_prob(a: f64, slope: f64, z: &[f64]) -> f64 {
    z.iter().map(|zi| sigmoid(a + slope * zi)).sum::<f64>() / z.len() as f64
}

/// Intercept `a` such that the mean of `sigmoid(a + slope * z_i)` over the
/// standardized driver values equals `psi`, found by bisection on
/// [`INTERCEPT_BRACKET`].
pub fn solve_intercept(mech: &Mechanism, driver_values: &[f64]) -> Result<f64> {
    mech.validate()?;
    if mech.link != Link::LogisticInDriver {
        return Err(Error::Calibration("intercept only exists for the logistic link".into()));
    }
    if driver_values.is_empty() {
        return Err(Error::Calibration("no driver values".into()));
    }
    if driver_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration("driver values must be finite".into()));
    }
    let z = if mech.slope == 0.0 {
        vec![0.0; driver_values.len()]
    } else {
        standardize(driver_values)
            .ok_or_else(|| Error::Calibration("driver column is constant".into()))?
    };
    solve_intercept_standardized(mech.psi, mech.slope, &z)
}

fn solve_intercept_standardized(psi: f64, slope: f64, z: &[f64]) -> Result<f64> {
    let (mut lo, mut hi) = INTERCEPT_BRACKET;
    let (f_lo, f_hi) = (mean_prob(lo, slope, z), mean_prob(hi, slope, z));
    if psi < f_lo - CALIBRATION_TOL || psi > f_hi + CALIBRATION_TOL {
        return Err(Error::Calibration(format!(
            "psi = {psi} outside achievable range [{f_lo:.3e}, {f_hi:.6}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mean_prob(mid, slope, z) < psi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let achieved = mean_prob(a, slope, z);
    if (achieved - psi).abs() > CALIBRATION_TOL {
        return Err(Error::Calibration(format!(
            "bisection reached mean probability {achieved} for psi = {psi}"
        )));
    }
    Ok(a)
}

/// Per-record deletion probabilities of `mech` on complete data.
pub fn deletion_probabilities(mech: &Mechanism, data: &DMatrix<f64>) -> Result<Vec<f64>> {
    mech.validate_for(data.ncols())?;
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    // Degenerate strengths are exact regardless of link.
    if mech.psi == 0.0 || mech.psi == 1.0 || mech.link == Link::ConstantRate {
        return Ok(vec![mech.psi; n]);
    }
    let driver: Vec<f64> = data.column(mech.driver_col).iter().copied().collect();
    if driver.iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration("driver values must be finite".into()));
    }
    let z = if mech.slope == 0.0 {
        vec![0.0; n]
    } else {
        standardize(&driver).ok_or_else(|| Error::Calibration("driver column is constant".into()))?
    };
    let a = solve_intercept_standardized(mech.psi, mech.slope, &z)?;
    Ok(z.iter().map(|zi| sigmoid(a + mech.slope * zi)).collect())
}

/// Deletes `mech.target_col` record by record. Deterministic given `seed`.
pub fn ampute(
    data: &DMatrix<f64>,
    mech: &Mechanism,
    seed: u64,
) -> Result<(PartialMatrix, AmputationReport)> {
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::AlreadyPartial);
    }
    let probs = deletion_probabilities(mech, data)?;
    let (n, m) = data.shape();
    let mut rng = rng_from(seed);
    let mut mask = Vec::with_capacity(n);
    let mut removed = 0usize;
    for p in &probs {
        let u: f64 = rng.random();
        let mut bits = vec![true; m];
        if u < *p {
            bits[mech.target_col] = false;
            removed += 1;
        }
        mask.push(Pattern(bits));
    }
    let partial = PartialMatrix::from_dmatrix(data, mask)?;
    let report = report_for(&partial, removed, n);
    Ok((partial, report))
}

/// Applies a further mechanism to already-partial data. The driver column
/// must be fully observed; target cells that are already missing stay
/// missing. Probabilities are computed from the observed driver values.
pub fn ampute_partial(
    data: &PartialMatrix,
    mech: &Mechanism,
    seed: u64,
) -> Result<(PartialMatrix, AmputationReport)> {
    let m = data.ncols();
    mech.validate_for(m)?;
    let n = data.nrows();
    if mech.kind != MechanismKind::Mcar && data.mask().iter().any(|p| !p[mech.driver_col]) {
        return Err(Error::InvalidMechanism("driver column has missing entries".into()));
    }
    let mut probe = data.to_dmatrix();
    if mech.kind == MechanismKind::Mcar || mech.link == Link::ConstantRate {
        probe.fill(0.0);
    } else {
        // only the driver column is read by the probability model
        for c in 0..m {
            if c != mech.driver_col {
                probe.column_mut(c).fill(0.0);
            }
        }
    }
    let probs = deletion_probabilities(mech, &probe)?;
    let mut rng = rng_from(seed);
    let mut mask: Vec<Pattern> = data.mask().to_vec();
    let mut removed = 0usize;
    for (pat, p) in mask.iter_mut().zip(&probs) {
        let u: f64 = rng.random();
        if u < *p && pat.0[mech.target_col] {
            pat.0[mech.target_col] = false;
            removed += 1;
        }
    }
    let partial = PartialMatrix::new(data.nrows(), m, data.raw_values().to_vec(), mask)?;
    let report = report_for(&partial, removed, n);
    Ok((partial, report))
}

fn report_for(partial: &PartialMatrix, removed: usize, n: usize) -> AmputationReport {
    let mut pattern_counts = BTreeMap::new();
    for p in partial.mask() {
        *pattern_counts.entry(p.clone()).or_insert(0) += 1;
    }
    AmputationReport {
        achieved_rate: removed as f64 / n as f64,
        pattern_counts,
    }
}
