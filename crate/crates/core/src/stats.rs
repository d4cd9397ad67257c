//! Statistical primitives used by the oracle and the diagnostics:
//! autocorrelation-aware standard errors, Kolmogorov-Smirnov machinery,
//! and simple regression. Estimation happens in `f64` regardless of the
//! simulation scalar; samples are converted on entry.

use crate::error::{Error, Result};
use crate::real::Real;

pub fn to_f64<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and biased (1/n) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v)
}

/// Biased autocovariance at a lag (normalization 1/n, the convention under
/// which the initial-sequence estimators are monotone).
pub fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (xs[i] - m) * (xs[i + lag] - m);
    }
    acc / n as f64
}

/// Integrated autocorrelation time by Geyer's initial positive sequence:
/// lag pairs are summed while their autocovariance sum stays positive.
/// Returns at least 1.
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let c0 = autocovariance(xs, 0);
    if c0 <= 0.0 {
        return 1.0; // constant series
    }
    let max_lag = n / 3;
    let mut sum_pairs = 0.0;
    let mut m = 0usize;
    loop {
        let l0 = 2 * m;
        let l1 = 2 * m + 1;
        if l1 > max_lag {
            break;
        }
        let gamma = autocovariance(xs, l0) + autocovariance(xs, l1);
        if gamma <= 0.0 {
            break;
        }
        sum_pairs += gamma;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum_pairs / c0;
    tau.max(1.0)
}

/// Effective sample size of an autocorrelated series.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    xs.len() as f64 / integrated_autocorrelation_time(xs)
}

/// Mean of an autocorrelated series plus its standard error
/// `sqrt(var * tau / n)`.
pub fn mean_with_iact_se(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs);
    if v <= 0.0 {
        return (m, 0.0);
    }
    let tau = integrated_autocorrelation_time(xs);
    (m, (v * tau / xs.len() as f64).sqrt())
}

/// Keeps every `ceil(tau)`-th sample so the survivors are approximately
/// independent.
pub fn thin_by_iact(xs: &[f64]) -> Vec<f64> {
    let tau = integrated_autocorrelation_time(xs);
    let stride = tau.ceil().max(1.0) as usize;
    xs.iter().step_by(stride).copied().collect()
}

/// Empirical autocorrelation at a lag.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let c0 = autocovariance(xs, 0);
    if c0 <= 0.0 {
        return 0.0;
    }
    autocovariance(xs, lag) / c0
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// One-sample two-sided Kolmogorov-Smirnov statistic against a CDF.
pub fn ks_statistic_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let upper = (i + 1) as f64 / n - f;
        let lower = f - i as f64 / n;
        d = d.max(upper.max(lower));
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic (sup distance between the two
/// right-continuous empirical CDFs); identical samples give exactly 0.
pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic complementary CDF of the Kolmogorov distribution,
/// `Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// KS p-value with Stephens' finite-sample correction; `n_eff` is `n` for
/// one-sample tests and `n m / (n + m)` for two-sample tests.
pub fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q(d * (s + 0.12 + 0.11 / s))
}

/// Ordinary least squares `y = a + b x`; returns `(slope, slope_stderr)`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::InsufficientData(
            "regression needs at least 3 paired points".into(),
        ));
    }
    let xm = mean(xs);
    let ym = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("regression abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - intercept - slope * x;
        ss_res += r * r;
    }
    let se = (ss_res / ((n - 2) as f64) / sxx).sqrt();
    Ok((slope, se))
}
