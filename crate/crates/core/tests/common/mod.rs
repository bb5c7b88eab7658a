//! Independent reference implementations used as test oracles. Nothing here
//! calls into the Cholesky-based code paths of the library.
#![allow(dead_code)]

use std::f64::consts::PI;

use misslik::GaussianParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(p: &GaussianParams) -> (Vec<f64>, Mat) {
    let m = p.dim();
    let mean = p.mean().iter().copied().collect();
    let cov = (0..m).map(|i| (0..m).map(|j| p.cov()[(i, j)]).collect()).collect();
    (mean, cov)
}

/// Determinant by cofactor expansion along the first row.
pub fn laplace_det(a: &Mat) -> f64 {
    let n = a.len();
    match n {
        0 => 1.0,
        1 => a[0][0],
        _ => (0..n)
            .map(|j| {
                let minor: Mat = a[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[0][j] * laplace_det(&minor)
            })
            .sum(),
    }
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut aug: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs())).unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Gaussian log density by explicit inverse and cofactor determinant.
pub struct DenseGaussian {
    pub mean: Vec<f64>,
    pub inv: Mat,
    pub log_norm: f64,
}

impl DenseGaussian {
    pub fn new(mean: &[f64], cov: &Mat) -> Self {
        let m = mean.len();
        let det = laplace_det(cov);
        assert!(det > 0.0, "covariance not positive definite");
        DenseGaussian {
            mean: mean.to_vec(),
            inv: gauss_jordan_inverse(cov),
            log_norm: -0.5 * m as f64 * (2.0 * PI).ln() - 0.5 * det.ln(),
        }
    }

    pub fn from_params(p: &GaussianParams) -> Self {
        let (mean, cov) = to_mat(p);
        Self::new(&mean, &cov)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut q = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                q += d[i] * self.inv[i][j] * d[j];
            }
        }
        self.log_norm - 0.5 * q
    }
}

pub fn select(mean: &[f64], cov: &Mat, idx: &[usize]) -> (Vec<f64>, Mat) {
    (
        idx.iter().map(|&i| mean[i]).collect(),
        idx.iter().map(|&i| idx.iter().map(|&j| cov[i][j]).collect()).collect(),
    )
}

/// Log of the integral of the joint density over the missing coordinates of
/// `pattern` (at most two), by the trapezoid rule on a uniform grid of step
/// `h` spanning `half_width` around the marginal mean of each missing
/// coordinate.
pub fn quadrature_marginal_loglik(p: &GaussianParams, pattern: &[bool], x: &[f64], h: f64, half_width: f64) -> f64 {
    let joint = DenseGaussian::from_params(p);
    let missing: Vec<usize> = (0..pattern.len()).filter(|&i| !pattern[i]).collect();
    assert!(missing.len() <= 2, "quadrature oracle handles at most two missing coordinates");
    let mut point = x.to_vec();
    let axis = |c: usize| {
        let mu = p.mean()[c];
        let k = (half_width / h).ceil() as i64;
        (-k..=k).map(move |i| mu + i as f64 * h)
    };
    // log-sum-exp over grid values
    let mut vals = Vec::new();
    match missing.len() {
        0 => return joint.log_density(x),
        1 => {
            for v in axis(missing[0]) {
                point[missing[0]] = v;
                vals.push(joint.log_density(&point));
            }
        }
        _ => {
            for v in axis(missing[0]) {
                point[missing[0]] = v;
                for w in axis(missing[1]) {
                    point[missing[1]] = w;
                    vals.push(joint.log_density(&point));
                }
            }
        }
    }
    let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = vals.iter().map(|v| (v - mx).exp()).sum();
    mx + s.ln() + missing.len() as f64 * h.ln()
}

/// Random mean in [-1, 1]^m and covariance `A A^T + 0.5 I`, entries of `A`
/// in [-1, 1]: eigenvalues bounded below by 0.5.
pub fn random_params<R: Rng>(m: usize, rng: &mut R) -> GaussianParams {
    let mean: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Mat = (0..m).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut cov = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            cov[i * m + j] = (0..m).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
        }
    }
    GaussianParams::from_slices(&mean, &cov).unwrap()
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `E[f(Z)]` for `Z ~ N(0,1)` by the trapezoid rule on [-12, 12].
pub fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-3;
    let k = (12.0 / h) as i64;
    (-k..=k).map(|i| {
        let z = i as f64 * h;
        f(z) * std_normal_pdf(z)
    })
    .sum::<f64>()
        * h
}

/// Bisection on `g(a) = target` for increasing `g`.
pub fn bisect_increasing(g: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bivariate observed-data log likelihood written out by hand: each row is
/// `(x0, x1)` with `None` for a missing cell.
pub fn bivariate_obs_loglik(mu: [f64; 2], s: [f64; 3], rows: &[[Option<f64>; 2]]) -> f64 {
    let (s11, s12, s22) = (s[0], s[1], s[2]);
    let det = s11 * s22 - s12 * s12;
    if s11 <= 0.0 || s22 <= 0.0 || det <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let ln2pi = (2.0 * PI).ln();
    rows.iter()
        .map(|r| match r {
            [Some(a), Some(b)] => {
                let (d0, d1) = (a - mu[0], b - mu[1]);
                let q = (s22 * d0 * d0 - 2.0 * s12 * d0 * d1 + s11 * d1 * d1) / det;
                -ln2pi - 0.5 * det.ln() - 0.5 * q
            }
            [Some(a), None] => -0.5 * ln2pi - 0.5 * s11.ln() - 0.5 * (a - mu[0]).powi(2) / s11,
            [None, Some(b)] => -0.5 * ln2pi - 0.5 * s22.ln() - 0.5 * (b - mu[1]).powi(2) / s22,
            [None, None] => panic!("empty row"),
        })
        .sum()
}

/// Maximizes [`bivariate_obs_loglik`] by a zooming grid search in
/// `(mu0, mu1, ln s0, ln s1, atanh rho)`: a 7^5 grid around the incumbent,
/// shrinking the box by 3 each round until its half-width is below `1e-7`.
pub fn grid_search_mle(rows: &[[Option<f64>; 2]], start_mu: [f64; 2], start_sd: [f64; 2]) -> ([f64; 2], [f64; 3], f64) {
    let to_params = |t: &[f64; 5]| {
        let (s0, s1, r) = (t[2].exp(), t[3].exp(), t[4].tanh());
        ([t[0], t[1]], [s0 * s0, r * s0 * s1, s1 * s1])
    };
    let eval = |t: &[f64; 5]| {
        let (mu, s) = to_params(t);
        bivariate_obs_loglik(mu, s, rows)
    };
    let mut best = [start_mu[0], start_mu[1], start_sd[0].ln(), start_sd[1].ln(), 0.0];
    let mut best_val = eval(&best);
    let mut half = [2.0 * start_sd[0], 2.0 * start_sd[1], 1.5, 1.5, 2.0];
    let steps = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    while half.iter().cloned().fold(0.0, f64::max) > 1e-7 {
        let centre = best;
        for a in steps {
            for b in steps {
                for c in steps {
                    for d in steps {
                        for e in steps {
                            let t = [
                                centre[0] + a / 3.0 * half[0],
                                centre[1] + b / 3.0 * half[1],
                                centre[2] + c / 3.0 * half[2],
                                centre[3] + d / 3.0 * half[3],
                                centre[4] + e / 3.0 * half[4],
                            ];
                            let v = eval(&t);
                            if v > best_val {
                                best_val = v;
                                best = t;
                            }
                        }
                    }
                }
            }
        }
        // only shrink when the incumbent sits inside the box
        if best == centre {
            for h in half.iter_mut() {
                *h /= 3.0;
            }
        }
    }
    let (mu, s) = to_params(&best);
    (mu, s, best_val)
}

/// Closed-form MLE for bivariate data where column 0 is always observed and
/// column 1 is missing on some rows: marginal moments of column 0 from all
/// rows, regression of column 1 on column 0 from the complete rows.
pub fn monotone_mle(rows: &[[Option<f64>; 2]]) -> ([f64; 2], [f64; 3]) {
    let n = rows.len() as f64;
    let x0: Vec<f64> = rows.iter().map(|r| r[0].unwrap()).collect();
    let m0 = x0.iter().sum::<f64>() / n;
    let s00 = x0.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / n;
    let cc: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r[0]?, r[1]?))).collect();
    let k = cc.len() as f64;
    let a_bar = cc.iter().map(|p| p.0).sum::<f64>() / k;
    let b_bar = cc.iter().map(|p| p.1).sum::<f64>() / k;
    let saa = cc.iter().map(|p| (p.0 - a_bar).powi(2)).sum::<f64>() / k;
    let sab = cc.iter().map(|p| (p.0 - a_bar) * (p.1 - b_bar)).sum::<f64>() / k;
    let sbb = cc.iter().map(|p| (p.1 - b_bar).powi(2)).sum::<f64>() / k;
    let beta = sab / saa;
    let resid = sbb - beta * sab;
    let m1 = b_bar + beta * (m0 - a_bar);
    ([m0, m1], [s00, beta * s00, resid + beta * beta * s00])
}
