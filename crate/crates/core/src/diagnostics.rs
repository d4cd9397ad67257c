//! Statistical verification of the structural identities of the sampled
//! measure: integration by parts (which pins the drift sign), realized
//! quadratic/cross variation of the reconstructed martingale parts,
//! ergodic averages with autocorrelation-aware errors, path-regularity
//! estimation, and distributional tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::ChainRecord;
use crate::error::{Error, Result};
use crate::field::{polymer_path, FieldState};
use crate::kernel::GramBasis;
use crate::localtime::local_time_grad;
use crate::model::ModelParams;
use crate::observables::Observable;
use crate::real::Real;
use crate::stats;

/// Outcome of one diagnostic: a statistic, the threshold it was held to,
/// and the verdict. `passed` follows the threshold semantics stated in
/// `details`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub details: String,
}

impl DiagnosticReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<28} statistic {:>12.6} threshold {:>10.6}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.threshold,
            self.details
        )
    }
}

/// Drift sign under test; `Flipped` exists as a mutation hook so the sign
/// detector in the integration-by-parts residual can be demonstrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftSign {
    Standard,
    Flipped,
}

/// Integration-by-parts residual for direction `(component, k)`:
/// `E[du/dk] + E[u b_k]` with `b_k = -(omega_ck + g (grad L)_ck)`, computed
/// as one weighted mean of the per-state combination so its standard error
/// is well-defined. Passes when the z-score is at most 3.
pub fn ibp_residual<T: Real>(
    ens: &crate::oracle::WeightedEnsemble<T>,
    gb: &GramBasis<T>,
    params: &ModelParams<T>,
    direction: (usize, usize),
    u: &dyn Observable<T>,
    sign: DriftSign,
) -> Result<DiagnosticReport> {
    if ens.ess < T::of(10.0) {
        return Err(Error::DegenerateWeights(format!(
            "effective sample size {} below 10",
            ens.ess.as_f64()
        )));
    }
    let (comp, k) = direction;
    let g = params.coupling;
    let eps = params.epsilon;
    let combos: Vec<T> = ens
        .states
        .par_iter()
        .map(|state| -> Result<T> {
            let du = u.dir_deriv(state, gb, eps, comp, k)?;
            let grad_ck = if g > T::zero() {
                let path = &state.coeffs * gb.path_matrix();
                local_time_grad(&path, gb, eps)?.grad[(comp, k)]
            } else {
                T::zero()
            };
            let mut b = -(state.coeffs[(comp, k)] + g * grad_ck);
            if sign == DriftSign::Flipped {
                b = -b;
            }
            Ok(du + u.eval(state, gb, eps)? * b)
        })
        .collect::<Result<_>>()?;
    let (mu, se) = crate::oracle::weighted_mean_se(&combos, &ens.log_weights);
    let z = zscore(mu.as_f64(), se.as_f64());
    Ok(DiagnosticReport {
        name: format!("ibp_{}_{}_{}", u.name(), comp, k),
        statistic: z,
        threshold: 3.0,
        passed: z <= 3.0,
        details: format!(
            "|E[du/dk] + E[u b_k]| / SE; residual {:.3e} +- {:.3e}",
            mu.as_f64(),
            se.as_f64()
        ),
    })
}

fn zscore(mu: f64, se: f64) -> f64 {
    if se > 0.0 {
        (mu / se).abs()
    } else if mu == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Martingale increments of a tracked coordinate reconstructed from the
/// recorded series: `dM_j = x_{j+1} - x_j - dt b(x_j)`.
fn martingale_increments<T: Real>(
    record: &ChainRecord<T>,
    slot: usize,
    steps_used: usize,
) -> Vec<f64> {
    let xs = &record.coord_series[slot];
    let bs = &record.drift_series[slot];
    let dt = record.dt.as_f64();
    (0..steps_used)
        .map(|j| xs[j + 1].as_f64() - xs[j].as_f64() - dt * bs[j].as_f64())
        .collect()
}

fn qv_steps<T: Real>(record: &ChainRecord<T>, t_end: T) -> Result<usize> {
    let dt = record.dt.as_f64();
    let want = (t_end.as_f64() / dt).round() as usize;
    if want == 0 {
        return Err(Error::InsufficientData("t_end shorter than one step".into()));
    }
    if record.steps < want as u64 {
        return Err(Error::InsufficientData(format!(
            "chain covers {} steps but t={} needs {}",
            record.steps,
            t_end.as_f64(),
            want
        )));
    }
    Ok(want)
}

/// Realized quadratic variation of the martingale part of one tracked
/// coordinate over `[0, t_end]`, normalized by `2 t`. The basis is
/// orthonormal, so the target is exactly 1; passes inside `[0.95, 1.05]`.
pub fn fukushima_qv<T: Real>(
    record: &ChainRecord<T>,
    direction: (usize, usize),
    t_end: T,
) -> Result<DiagnosticReport> {
    let slot = record
        .tracked_index(direction)
        .ok_or_else(|| Error::Index(format!("direction {direction:?} was not tracked")))?;
    let steps_used = qv_steps(record, t_end)?;
    let dm = martingale_increments(record, slot, steps_used);
    let qv: f64 = dm.iter().map(|x| x * x).sum();
    let t = record.dt.as_f64() * steps_used as f64;
    let statistic = qv / (2.0 * t);
    let passed = (0.95..=1.05).contains(&statistic);
    Ok(DiagnosticReport {
        name: format!("fukushima_qv_{}_{}", direction.0, direction.1),
        statistic,
        threshold: 0.05,
        passed,
        details: format!("realized QV/(2t) over t={t}; pass iff within [0.95, 1.05]"),
    })
}

/// Realized cross variation between two distinct tracked directions over
/// `[0, t_end]`, divided by `t`; the orthonormal target is 0, tested at 3
/// standard errors.
pub fn cross_variation<T: Real>(
    record: &ChainRecord<T>,
    dir_a: (usize, usize),
    dir_b: (usize, usize),
    t_end: T,
) -> Result<DiagnosticReport> {
    if dir_a == dir_b {
        return Err(Error::Index("cross variation needs distinct directions".into()));
    }
    let slot_a = record
        .tracked_index(dir_a)
        .ok_or_else(|| Error::Index(format!("direction {dir_a:?} was not tracked")))?;
    let slot_b = record
        .tracked_index(dir_b)
        .ok_or_else(|| Error::Index(format!("direction {dir_b:?} was not tracked")))?;
    let steps_used = qv_steps(record, t_end)?;
    let da = martingale_increments(record, slot_a, steps_used);
    let db = martingale_increments(record, slot_b, steps_used);
    let t = record.dt.as_f64() * steps_used as f64;
    let products: Vec<f64> = da.iter().zip(&db).map(|(a, b)| a * b).collect();
    let cv: f64 = products.iter().sum::<f64>() / t;
    let se = products.iter().map(|p| p * p).sum::<f64>().sqrt() / t;
    let z = zscore(cv, se);
    Ok(DiagnosticReport {
        name: format!(
            "cross_variation_{}_{}_vs_{}_{}",
            dir_a.0, dir_a.1, dir_b.0, dir_b.1
        ),
        statistic: z,
        threshold: 3.0,
        passed: z <= 3.0,
        details: format!("realized CV/t {cv:.3e} +- {se:.3e} vs orthonormal target 0"),
    })
}

/// Time average of a recorded observable after burn-in, with a standard
/// error from the integrated autocorrelation time.
pub fn ergodic_average<T: Real>(
    record: &ChainRecord<T>,
    observable: &str,
    burn_in: usize,
) -> Result<(T, T)> {
    let series = record
        .observable_series(observable)
        .ok_or_else(|| Error::Index(format!("observable {observable:?} was not recorded")))?;
    ergodic_average_series(series, burn_in)
}

/// Same, over a raw series.
pub fn ergodic_average_series<T: Real>(series: &[T], burn_in: usize) -> Result<(T, T)> {
    if series.len() <= burn_in + 1 {
        return Err(Error::InsufficientData(format!(
            "series of length {} cannot drop burn_in {}",
            series.len(),
            burn_in
        )));
    }
    let tail = stats::to_f64(&series[burn_in..]);
    let (mu, se) = stats::mean_with_iact_se(&tail);
    Ok((T::of(mu), T::of(se)))
}

/// Agreement between a chain average and an oracle estimate at 3 combined
/// standard errors.
pub fn agreement_report(
    name: &str,
    chain: (f64, f64),
    oracle: (f64, f64),
) -> DiagnosticReport {
    let diff = chain.0 - oracle.0;
    let se = (chain.1 * chain.1 + oracle.1 * oracle.1).sqrt();
    let z = zscore(diff, se);
    DiagnosticReport {
        name: format!("chain_vs_oracle_{name}"),
        statistic: z,
        threshold: 3.0,
        passed: z <= 3.0,
        details: format!(
            "chain {:.6} +- {:.2e} vs oracle {:.6} +- {:.2e}",
            chain.0, chain.1, oracle.0, oracle.1
        ),
    }
}

/// Regression slope of `log mean |increment|^2` against `log h` over dyadic
/// lags. For full-basis prior samples the slope estimates twice the Hurst
/// parameter.
pub fn holder_exponent<T: Real>(paths: &[nalgebra::DMatrix<T>], grid: &[T]) -> Result<(T, T)> {
    if paths.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "holder exponent needs at least 100 paths, got {}",
            paths.len()
        )));
    }
    let m = grid.len();
    let step = grid[0].as_f64();
    for (i, &tau) in grid.iter().enumerate() {
        if (tau.as_f64() - step * (i + 1) as f64).abs() > 1e-9 * step {
            return Err(Error::Domain("holder exponent requires a uniform grid".into()));
        }
    }
    let mut lags = Vec::new();
    let mut lag = 1usize;
    while lag <= m / 4 {
        lags.push(lag);
        lag *= 2;
    }
    if lags.len() < 3 {
        return Err(Error::InsufficientData(
            "grid too short for at least 3 dyadic lags".into(),
        ));
    }
    let mut log_h = Vec::with_capacity(lags.len());
    let mut log_msq = Vec::with_capacity(lags.len());
    for &lag in &lags {
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for path in paths {
            let d = path.nrows();
            for start in 0..m - lag {
                let mut sq = 0.0;
                for c in 0..d {
                    let dx = path[(c, start + lag)].as_f64() - path[(c, start)].as_f64();
                    sq += dx * dx;
                }
                acc += sq;
                count += 1;
            }
        }
        log_h.push((step * lag as f64).ln());
        log_msq.push((acc / count as f64).ln());
    }
    let (slope, se) = stats::ols_slope(&log_h, &log_msq)?;
    Ok((T::of(slope), T::of(se)))
}

/// Maximum deviation, over shared grid points and components, between the
/// paths of one state evaluated on a coarse basis and on a refining fine
/// basis. Monitors continuity of the integrated configuration under grid
/// refinement.
pub fn continuity_defect<T: Real>(
    state: &FieldState<T>,
    gb_coarse: &GramBasis<T>,
    gb_fine: &GramBasis<T>,
) -> Result<T> {
    if gb_coarse.basis_len() != gb_fine.basis_len() {
        return Err(Error::Shape(
            "coarse and fine bases must share the truncation size".into(),
        ));
    }
    if gb_coarse.basis_len() != state.basis_len() {
        return Err(Error::Shape("state does not match the shared basis size".into()));
    }
    // map each coarse grid point to its position in the fine grid
    let fine_grid = gb_fine.grid();
    let mut shared = Vec::with_capacity(gb_coarse.grid_len());
    for &tau in gb_coarse.grid() {
        let hit = fine_grid.iter().position(|&s| {
            (s - tau).abs() <= T::of(1e-9) * tau.abs().max(T::one())
        });
        match hit {
            Some(j) => shared.push(j),
            None => {
                return Err(Error::Shape(
                    "fine grid does not refine the coarse grid".into(),
                ))
            }
        }
    }
    let coarse_path = polymer_path(state, gb_coarse)?;
    let fine_path = polymer_path(state, gb_fine)?;
    let mut worst = T::zero();
    for (i_coarse, &i_fine) in shared.iter().enumerate() {
        for c in 0..state.dim() {
            let dev = (coarse_path[(c, i_coarse)] - fine_path[(c, i_fine)]).abs();
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

/// Reference law for [`ks_test`].
pub enum ReferenceDistribution {
    StandardNormal,
    /// Empirical CDF of a reference sample (two-sample test).
    Empirical(Vec<f64>),
}

/// Two-sided Kolmogorov-Smirnov test at level 0.01. The statistic reported
/// is the p-value; the test passes when it exceeds the level. Samples
/// should be thinned to approximate independence first (see
/// [`crate::stats::thin_by_iact`]).
pub fn ks_test<T: Real>(
    samples: &[T],
    reference: &ReferenceDistribution,
) -> Result<DiagnosticReport> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "ks test needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let xs = stats::to_f64(samples);
    let n = xs.len() as f64;
    let (d, n_eff, what) = match reference {
        ReferenceDistribution::StandardNormal => {
            (stats::ks_statistic_cdf(&xs, stats::normal_cdf), n, "standard normal")
        }
        ReferenceDistribution::Empirical(ref_sample) => {
            let m = ref_sample.len() as f64;
            (
                stats::ks_statistic_two_sample(&xs, ref_sample),
                n * m / (n + m),
                "empirical reference",
            )
        }
    };
    let p = stats::ks_p_value(d, n_eff);
    Ok(DiagnosticReport {
        name: "ks_test".into(),
        statistic: p,
        threshold: 0.01,
        passed: p > 0.01,
        details: format!("D = {d:.5} vs {what}; pass iff p-value > 0.01"),
    })
}
