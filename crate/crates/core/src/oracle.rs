//! Independent ground truth for the sampled measure: self-normalized
//! importance sampling from direct prior draws (weights `exp(-g L)`), and
//! finite-difference gradients of the local time.
//!
//! Nothing here shares code with the chain dynamics beyond the state and
//! local-time definitions, so agreement between chain averages and these
//! estimates is a genuine cross-check.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sample_prior, FieldState};
use crate::kernel::GramBasis;
use crate::localtime::local_time_of_coeffs;
use crate::model::{ModelParams, RngStream};
use crate::observables::Observable;
use crate::real::Real;

/// States drawn from the prior with log importance weights `-g L` and the
/// effective sample size of the weight set.
#[derive(Clone, Debug)]
pub struct WeightedEnsemble<T: Real> {
    pub states: Vec<FieldState<T>>,
    pub log_weights: Vec<T>,
    pub ess: T,
}

/// Draws per parallel batch; batch `b` consumes the stream `base + b`, so
/// the ensemble is reproducible for any thread count.
const BATCH: usize = 512;

/// Builds `count` i.i.d. prior draws with weights `exp(-g L_eps)`.
pub fn build_ensemble<T: Real>(
    params: &ModelParams<T>,
    gb: &GramBasis<T>,
    count: usize,
    base: RngStream,
) -> Result<WeightedEnsemble<T>> {
    if count == 0 {
        return Err(Error::Domain("ensemble count must be >= 1".into()));
    }
    type Batch<T> = (Vec<FieldState<T>>, Vec<T>);
    let g = params.coupling;
    let eps = params.epsilon;
    let dim = params.dim;
    let n_batches = count.div_ceil(BATCH);
    let batches: Vec<Result<Batch<T>>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let take = BATCH.min(count - b * BATCH);
            let mut rng = RngStream::new(base.seed, base.stream_id + b as u64).rng();
            let mut states = Vec::with_capacity(take);
            let mut logw = Vec::with_capacity(take);
            for _ in 0..take {
                let state = sample_prior(gb, dim, &mut rng);
                let lw = if g > T::zero() {
                    -(g * local_time_of_coeffs(&state.coeffs, gb, eps)?)
                } else {
                    T::zero()
                };
                states.push(state);
                logw.push(lw);
            }
            Ok((states, logw))
        })
        .collect();

    let mut states = Vec::with_capacity(count);
    let mut log_weights = Vec::with_capacity(count);
    for batch in batches {
        let (s, w) = batch?;
        states.extend(s);
        log_weights.extend(w);
    }
    let ess = effective_sample_size(&log_weights);
    Ok(WeightedEnsemble {
        states,
        log_weights,
        ess,
    })
}

/// Normalized weights via the max-shift; exactly invariant (up to rounding
/// of the shifted exponents) under adding a constant to all log weights.
pub fn normalized_weights<T: Real>(log_weights: &[T]) -> Vec<T> {
    let max = log_weights
        .iter()
        .fold(log_weights[0], |a, &x| a.max(x));
    let raw: Vec<T> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let total: T = raw.iter().fold(T::zero(), |a, &x| a + x);
    raw.into_iter().map(|w| w / total).collect()
}

/// `(sum w)^2 / sum w^2`, invariant under positive rescaling of the
/// weights; equals the count exactly when all weights agree.
pub fn effective_sample_size<T: Real>(log_weights: &[T]) -> T {
    let max = log_weights
        .iter()
        .fold(log_weights[0], |a, &x| a.max(x));
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    for &lw in log_weights {
        let w = (lw - max).exp();
        sum += w;
        sum_sq += w * w;
    }
    sum * sum / sum_sq
}

/// Self-normalized importance estimate of an observable with a
/// delta-method standard error. Errors out when the weights are too
/// degenerate to mean anything (`ess < 10`).
pub fn expectation<T: Real>(
    ens: &WeightedEnsemble<T>,
    gb: &GramBasis<T>,
    params: &ModelParams<T>,
    obs: &dyn Observable<T>,
) -> Result<(T, T)> {
    if ens.ess < T::of(10.0) {
        return Err(Error::DegenerateWeights(format!(
            "effective sample size {} below 10",
            ens.ess.as_f64()
        )));
    }
    let values = eval_over_states(ens, gb, params, obs)?;
    Ok(weighted_mean_se(&values, &ens.log_weights))
}

fn eval_over_states<T: Real>(
    ens: &WeightedEnsemble<T>,
    gb: &GramBasis<T>,
    params: &ModelParams<T>,
    obs: &dyn Observable<T>,
) -> Result<Vec<T>> {
    ens.states
        .par_iter()
        .map(|s| obs.eval(s, gb, params.epsilon))
        .collect()
}

/// Weighted mean and the delta-method SE `sqrt(sum W_i^2 (f_i - mu)^2)`
/// (reduces to `sd/sqrt(n)` for equal weights).
pub fn weighted_mean_se<T: Real>(values: &[T], log_weights: &[T]) -> (T, T) {
    let w = normalized_weights(log_weights);
    let mut mu = T::zero();
    for (&v, &wi) in values.iter().zip(&w) {
        mu += wi * v;
    }
    let mut var = T::zero();
    for (&v, &wi) in values.iter().zip(&w) {
        let dev = v - mu;
        var += wi * wi * dev * dev;
    }
    (mu, var.sqrt())
}

/// Central finite differences of the local time in every coefficient
/// direction: the oracle for the analytic gradient.
pub fn fd_gradient<T: Real>(
    state: &FieldState<T>,
    gb: &GramBasis<T>,
    params: &ModelParams<T>,
    h: T,
) -> Result<DMatrix<T>> {
    if !(h > T::zero()) {
        return Err(Error::Domain("finite-difference step must be > 0".into()));
    }
    let (d, n) = (state.dim(), state.basis_len());
    let two_h = h + h;
    let entries: Vec<Result<T>> = (0..d * n)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / n, idx % n);
            let mut up = state.coeffs.clone();
            up[(i, k)] += h;
            let mut dn = state.coeffs.clone();
            dn[(i, k)] -= h;
            let lu = local_time_of_coeffs(&up, gb, params.epsilon)?;
            let ld = local_time_of_coeffs(&dn, gb, params.epsilon)?;
            Ok((lu - ld) / two_h)
        })
        .collect();
    let mut grad = DMatrix::<T>::zeros(d, n);
    for (idx, e) in entries.into_iter().enumerate() {
        grad[(idx / n, idx % n)] = e?;
    }
    Ok(grad)
}

/// Exported ensemble summary: `{count, ess, g, observables}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSummary<T> {
    pub count: usize,
    pub ess: T,
    pub g: T,
    pub observables: Vec<ObservableEstimate<T>>,
}

/// `std_error` is `null` when the weight set is too degenerate for a
/// meaningful error bar.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservableEstimate<T> {
    pub name: String,
    pub estimate: T,
    pub std_error: Option<T>,
}

impl<T: Real> OracleSummary<T> {
    pub fn estimate(&self, name: &str) -> Option<&ObservableEstimate<T>> {
        self.observables.iter().find(|o| o.name == name)
    }
}

/// Summarizes an ensemble over a set of observables. Estimates are always
/// produced; standard errors only when `ess >= 10`.
pub fn summarize<T: Real>(
    ens: &WeightedEnsemble<T>,
    gb: &GramBasis<T>,
    params: &ModelParams<T>,
    observables: &[&dyn Observable<T>],
) -> Result<OracleSummary<T>> {
    let degenerate = ens.ess < T::of(10.0);
    let mut out = Vec::with_capacity(observables.len());
    for obs in observables {
        let values = eval_over_states(ens, gb, params, *obs)?;
        let (mu, se) = weighted_mean_se(&values, &ens.log_weights);
        out.push(ObservableEstimate {
            name: obs.name(),
            estimate: mu,
            std_error: if degenerate { None } else { Some(se) },
        });
    }
    Ok(OracleSummary {
        count: ens.states.len(),
        ess: ens.ess,
        g: params.coupling,
        observables: out,
    })
}
