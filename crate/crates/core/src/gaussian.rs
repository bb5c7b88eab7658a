//! Exact multivariate-normal computations.
//!
//! All factorizations go through Cholesky; log-determinants are
//! `2 * sum(log(diag(L)))`. Patterns are plain `&[bool]` slices here
//! (`true` = observed) so this module does not depend on the missingness
//! types.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for covariance symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOL` count as non-negative.
pub const PSD_TOL: f64 = 1e-8;
/// Relative eigenvalue floor used by [`nearest_pd`] when none is supplied.
pub const DEFAULT_FLOOR_REL: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean vector and covariance matrix of a multivariate normal.
///
/// The covariance is validated on construction (finite, symmetric within
/// [`SYMMETRY_TOL`], Cholesky-factorizable) and the lower factor is kept
/// around so repeated density evaluations do not refactor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

/// On-disk shape of [`GaussianParams`]: `{"mean": [...], "covariance": [[...], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamsRepr {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl TryFrom<ParamsRepr> for GaussianParams {
    type Error = Error;

    fn try_from(repr: ParamsRepr) -> Result<Self> {
        let m = repr.mean.len();
        if repr.covariance.len() != m || repr.covariance.iter().any(|r| r.len() != m) {
            return Err(Error::dim(format!("covariance must be {m}x{m}")));
        }
        let cov = DMatrix::from_fn(m, m, |i, j| repr.covariance[i][j]);
        GaussianParams::new(DVector::from_vec(repr.mean), cov)
    }
}

impl From<GaussianParams> for ParamsRepr {
    fn from(p: GaussianParams) -> Self {
        let m = p.dim();
        ParamsRepr {
            mean: p.mean.iter().copied().collect(),
            covariance: (0..m).map(|i| (0..m).map(|j| p.cov[(i, j)]).collect()).collect(),
        }
    }
}

impl PartialEq for GaussianParams {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if m == 0 {
            return Err(Error::dim("zero-dimensional distribution"));
        }
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::dim(format!(
                "mean has length {m} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite parameter".into()));
        }
        let asym = max_asymmetry(&cov);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let chol_l = cholesky_lower(&cov).ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(GaussianParams {
            mean,
            cov,
            chol_l,
            log_det,
        })
    }

    /// Standard normal in `m` dimensions.
    pub fn standard(m: usize) -> Self {
        GaussianParams::new(DVector::zeros(m), DMatrix::identity(m, m))
            .expect("identity covariance is positive definite")
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let m = mean.len();
        if cov_row_major.len() != m * m {
            return Err(Error::dim(format!("covariance needs {} entries", m * m)));
        }
        GaussianParams::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(m, m, cov_row_major),
        )
    }

    /// Builds params from an arbitrary symmetric covariance, repairing it
    /// with [`nearest_pd`] first.
    pub fn repaired(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let cov = nearest_pd(&cov, None)?;
        GaussianParams::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `log N(x; mean, cov)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let m = self.dim();
        if x.len() != m {
            return Err(Error::dim(format!("point has length {} but m = {m}", x.len())));
        }
        let mut r: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        let quad = forward_sub_sq(&self.chol_l, &mut r);
        Ok(-0.5 * (m as f64 * LN_2PI + self.log_det + quad))
    }

    /// Distribution of the coordinates flagged `true` in `pattern`.
    pub fn marginal(&self, pattern: &[bool]) -> Result<ObservedSubmodel> {
        self.check_pattern(pattern)?;
        let indices: Vec<usize> = (0..pattern.len()).filter(|&i| pattern[i]).collect();
        if indices.is_empty() {
            return Err(Error::EmptyPattern);
        }
        let mean_obs = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.mean[i]));
        let cov_obs = self.cov.select_rows(&indices).select_columns(&indices);
        // Principal submatrices of a PD matrix are PD, but roundoff can still
        // bite at extreme conditioning.
        let chol_l = cholesky_lower(&cov_obs).ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(ObservedSubmodel {
            indices,
            mean_obs,
            cov_obs,
            chol_l,
            log_det,
        })
    }

    /// Precomputes the regression of the missing block on the observed
    /// block for one pattern. Use this when conditioning many rows that
    /// share a pattern.
    pub fn conditioner(&self, pattern: &[bool]) -> Result<Conditioner> {
        self.check_pattern(pattern)?;
        let observed: Vec<usize> = (0..pattern.len()).filter(|&i| pattern[i]).collect();
        let missing: Vec<usize> = (0..pattern.len()).filter(|&i| !pattern[i]).collect();
        if observed.is_empty() {
            return Err(Error::EmptyPattern);
        }
        if missing.is_empty() {
            return Err(Error::dim("pattern has no missing coordinates to condition"));
        }
        let s_oo = self.cov.select_rows(&observed).select_columns(&observed);
        let s_om = self.cov.select_rows(&observed).select_columns(&missing);
        let s_mm = self.cov.select_rows(&missing).select_columns(&missing);
        let chol = Cholesky::new(s_oo).ok_or(Error::NotPositiveDefinite)?;
        // coef^T = S_oo^{-1} S_om
        let solved = chol.solve(&s_om);
        let coef = solved.transpose();
        let mut cov_given = s_mm - s_om.transpose() * &solved;
        symmetrize(&mut cov_given);
        Ok(Conditioner {
            observed: observed.clone(),
            missing: missing.clone(),
            mean_obs: DVector::from_iterator(observed.len(), observed.iter().map(|&i| self.mean[i])),
            mean_mis: DVector::from_iterator(missing.len(), missing.iter().map(|&i| self.mean[i])),
            coef,
            cov_given,
        })
    }

    /// Distribution of the missing coordinates given the observed ones.
    pub fn conditional(&self, pattern: &[bool], x_obs: &[f64]) -> Result<ConditionalGaussian> {
        let c = self.conditioner(pattern)?;
        if x_obs.len() != c.observed.len() {
            return Err(Error::dim(format!(
                "expected {} observed values, got {}",
                c.observed.len(),
                x_obs.len()
            )));
        }
        Ok(ConditionalGaussian {
            mean_given: c.mean_given(x_obs),
            cov_given: c.cov_given.clone(),
        })
    }

    /// Stacked parameter vector: the mean followed by the lower triangle of
    /// the covariance, row by row (`(0,0), (1,0), (1,1), (2,0), ...`).
    pub fn stacked(&self) -> Vec<f64> {
        let m = self.dim();
        let mut out = Vec::with_capacity(stacked_len(m));
        out.extend(self.mean.iter());
        for i in 0..m {
            for j in 0..=i {
                out.push(self.cov[(i, j)]);
            }
        }
        out
    }

    /// Inverse of [`GaussianParams::stacked`]; the covariance is repaired
    /// with [`nearest_pd`].
    pub fn from_stacked(m: usize, stacked: &[f64]) -> Result<Self> {
        if stacked.len() != stacked_len(m) {
            return Err(Error::dim(format!(
                "stacked vector has length {} but m = {m} needs {}",
                stacked.len(),
                stacked_len(m)
            )));
        }
        let mean = DVector::from_column_slice(&stacked[..m]);
        let mut cov = DMatrix::zeros(m, m);
        let mut k = m;
        for i in 0..m {
            for j in 0..=i {
                cov[(i, j)] = stacked[k];
                cov[(j, i)] = stacked[k];
                k += 1;
            }
        }
        GaussianParams::repaired(mean, cov)
    }

    /// `n` i.i.d. draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(n, m);
        let mut z = vec![0.0; m];
        for r in 0..n {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..m {
                let mut acc = self.mean[i];
                for (k, zk) in z.iter().enumerate().take(i + 1) {
                    acc += self.chol_l[(i, k)] * zk;
                }
                out[(r, i)] = acc;
            }
        }
        out
    }

    fn check_pattern(&self, pattern: &[bool]) -> Result<()> {
        if pattern.len() != self.dim() {
            Err(Error::dim(format!(
                "pattern has length {} but m = {}",
                pattern.len(),
                self.dim()
            )))
        } else {
            Ok(())
        }
    }
}

/// Length of the stacked parameter vector for dimension `m`.
pub fn stacked_len(m: usize) -> usize {
    m + m * (m + 1) / 2
}

/// Mean and covariance restricted to a set of observed coordinates.
#[derive(Clone, Debug)]
pub struct ObservedSubmodel {
    indices: Vec<usize>,
    mean_obs: DVector<f64>,
    cov_obs: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl ObservedSubmodel {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mean_obs(&self) -> &DVector<f64> {
        &self.mean_obs
    }

    pub fn cov_obs(&self) -> &DMatrix<f64> {
        &self.cov_obs
    }

    /// Log density at the observed subvector `x_obs` (length `|indices|`).
    pub fn log_density(&self, x_obs: &[f64]) -> Result<f64> {
        if x_obs.len() != self.indices.len() {
            return Err(Error::dim(format!(
                "expected {} observed values, got {}",
                self.indices.len(),
                x_obs.len()
            )));
        }
        let mut r: Vec<f64> = x_obs.iter().zip(self.mean_obs.iter()).map(|(a, b)| a - b).collect();
        Ok(self.finish(&mut r))
    }

    /// Log density reading the observed coordinates out of a full-length
    /// row. Cells outside `indices` are never touched.
    pub fn log_density_row(&self, row: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend(self.indices.iter().zip(self.mean_obs.iter()).map(|(&i, mu)| row[i] - mu));
        self.finish(scratch)
    }

    fn finish(&self, r: &mut [f64]) -> f64 {
        let quad = forward_sub_sq(&self.chol_l, r);
        -0.5 * (self.indices.len() as f64 * LN_2PI + self.log_det + quad)
    }
}

/// Missing-given-observed distribution for a single row.
#[derive(Clone, Debug)]
pub struct ConditionalGaussian {
    pub mean_given: DVector<f64>,
    pub cov_given: DMatrix<f64>,
}

/// Per-pattern regression of the missing block on the observed block.
#[derive(Clone, Debug)]
pub struct Conditioner {
    observed: Vec<usize>,
    missing: Vec<usize>,
    mean_obs: DVector<f64>,
    mean_mis: DVector<f64>,
    coef: DMatrix<f64>,
    cov_given: DMatrix<f64>,
}

impl Conditioner {
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn cov_given(&self) -> &DMatrix<f64> {
        &self.cov_given
    }

    pub fn mean_given(&self, x_obs: &[f64]) -> DVector<f64> {
        let dev = DVector::from_iterator(
            self.observed.len(),
            x_obs.iter().zip(self.mean_obs.iter()).map(|(a, b)| a - b),
        );
        &self.mean_mis + &self.coef * dev
    }

    /// Conditional mean written straight into the missing slots of a
    /// full-length row.
    pub fn fill_row(&self, row: &mut [f64]) {
        for (k, &mi) in self.missing.iter().enumerate() {
            let mut acc = self.mean_mis[k];
            for (l, &oi) in self.observed.iter().enumerate() {
                acc += self.coef[(k, l)] * (row[oi] - self.mean_obs[l]);
            }
            row[mi] = acc;
        }
    }
}

/// Returns `cov` unchanged when it already factorizes; otherwise clips its
/// eigenvalues at `floor` (default `1e-8 * largest eigenvalue`) and
/// re-symmetrizes.
pub fn nearest_pd(cov: &DMatrix<f64>, floor: Option<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::dim("covariance must be square"));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite covariance entry".into()));
    }
    let asym = max_asymmetry(cov);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    if cholesky_lower(cov).is_some() {
        return Ok(cov.clone());
    }
    let n = cov.nrows();
    let mut sym = cov.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = match floor {
        Some(f) if f > 0.0 => f,
        Some(f) => {
            return Err(Error::NumericalFailure(format!("eigenvalue floor must be positive, got {f}")))
        }
        None if largest > 0.0 => DEFAULT_FLOOR_REL * largest,
        None => DEFAULT_FLOOR_REL,
    };
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    symmetrize(&mut out);
    // Reconstruction roundoff can leave the smallest eigenvalue a hair
    // under zero for badly scaled inputs.
    let mut bump = floor;
    for _ in 0..60 {
        if cholesky_lower(&out).is_some() {
            return Ok(out);
        }
        for i in 0..n {
            out[(i, i)] += bump;
        }
        bump *= 2.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Sample mean and covariance (denominator `N`) of the rows of `data`.
pub fn sample_moments(data: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let inv_n = 1.0 / n as f64;
    let mean = data.row_sum().transpose() * inv_n;
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.tr_mul(&centered) * inv_n;
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// [`sample_moments`] repaired into valid [`GaussianParams`].
pub fn moment_params(data: &DMatrix<f64>) -> Result<GaussianParams> {
    let (mean, cov) = sample_moments(data)?;
    GaussianParams::repaired(mean, cov)
}

pub(crate) fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = Cholesky::new(m.clone())?.unpack();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solves `L y = r` in place and returns `|y|^2`.
fn forward_sub_sq(l: &DMatrix<f64>, r: &mut [f64]) -> f64 {
    let n = r.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut s = r[i];
        for k in 0..i {
            s -= l[(i, k)] * r[k];
        }
        let y = s / l[(i, i)];
        r[i] = y;
        acc += y * y;
    }
    acc
}
