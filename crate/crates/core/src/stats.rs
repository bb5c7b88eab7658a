//! Small descriptive-statistics helpers shared by the estimators and the
//! sweep summaries.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator `n - 1`); zero for fewer than two
/// values.
pub fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Per-coordinate sample SD over a list of equal-length vectors.
pub fn columnwise_sd(rows: &[Vec<f64>], len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            // identical values give exactly zero, not roundoff
            if col.iter().all(|v| *v == col[0]) {
                0.0
            } else {
                sd(&col)
            }
        })
        .collect()
}

pub fn columnwise_mean(rows: &[Vec<f64>], len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            if col.iter().all(|v| *v == col[0]) {
                col[0]
            } else {
                mean(&col)
            }
        })
        .collect()
}

/// Linear-interpolation quantile (R type 7). `NaN` values are not allowed;
/// `-inf` sorts first.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi || v[lo] == v[hi] || v[lo].is_infinite() {
        v[lo]
    } else if v[hi].is_infinite() {
        v[hi]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn iqr(xs: &[f64]) -> f64 {
    quantile(xs, 0.75) - quantile(xs, 0.25)
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_half_upper_tail(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // log-space binomial coefficients keep this exact enough for n in the
    // thousands
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0; // ln C(n, 0)
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            ln_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        if j >= k {
            total += (ln_c + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

/// One-sided sign test p-value for `successes` out of `trials` under the
/// null of a fair coin.
pub fn sign_test_p(successes: usize, trials: usize) -> f64 {
    binomial_half_upper_tail(successes, trials)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
