//! Quantization dynamics in coefficient coordinates.
//!
//! The drift is `b(x) = -(x + g * grad L(x))`: the linear part is the
//! Ornstein-Uhlenbeck drift whose stationary law is the Gaussian reference
//! measure, the gradient part tilts it toward the self-repelling target
//! `pi(x) ~ exp(-|x|^2/2 - g L(x))`. With the `sqrt(2) dW` diffusion the
//! coordinate variance at g=0 is exactly 1.
//!
//! Three one-step maps are provided: Euler-Maruyama, a Strang splitting
//! that integrates the linear part exactly, and a Metropolis-adjusted
//! variant that is reversible for the truncated target.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldState;
use crate::kernel::GramBasis;
use crate::localtime::local_time_grad;
use crate::real::Real;

/// One-step integration scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    OuSplitting,
    Mala,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::OuSplitting => "ou_splitting",
            Scheme::Mala => "mala",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" => Ok(Scheme::EulerMaruyama),
            "ou_splitting" => Ok(Scheme::OuSplitting),
            "mala" => Ok(Scheme::Mala),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?}; expected euler_maruyama | ou_splitting | mala"
            ))),
        }
    }
}

/// Stepper configuration: scheme, compute-time step, coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig<T> {
    pub scheme: Scheme,
    pub dt: T,
    pub g: T,
}

impl<T: Real> StepperConfig<T> {
    pub fn new(scheme: Scheme, dt: T, g: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::Domain("stepper dt must be > 0".into()));
        }
        if !(g >= T::zero()) {
            return Err(Error::Domain("coupling g must be >= 0".into()));
        }
        Ok(Self { scheme, dt, g })
    }
}

/// Drift at one state, with the local time cached when it was computed
/// (`None` only in the free case g = 0, where it is not needed).
#[derive(Clone, Debug)]
pub struct DriftEval<T: Real> {
    /// `d x N` drift matrix `-(coeffs + g grad L)`.
    pub drift: DMatrix<T>,
    pub local_time: Option<T>,
}

/// Full per-state evaluation shared between proposal and acceptance: state,
/// drift, and the unnormalized log target density.
#[derive(Clone, Debug)]
pub struct StateEval<T: Real> {
    pub state: FieldState<T>,
    pub drift: DriftEval<T>,
    /// `-|x|^2/2 - g L(x)` (unnormalized).
    pub log_target: T,
}

/// Evaluates drift, local time and log target at a state for coupling `g`
/// and mollifier variance `epsilon`.
pub fn eval_state<T: Real>(
    state: FieldState<T>,
    gb: &GramBasis<T>,
    epsilon: T,
    g: T,
) -> Result<StateEval<T>> {
    let half = T::of(0.5);
    let sq = state.coeffs.iter().fold(T::zero(), |a, &x| a + x * x);
    if g > T::zero() {
        let path = &state.coeffs * gb.path_matrix();
        let lt = local_time_grad(&path, gb, epsilon)?;
        let drift = DMatrix::from_fn(state.dim(), state.basis_len(), |i, k| {
            -(state.coeffs[(i, k)] + g * lt.grad[(i, k)])
        });
        let log_target = -half * sq - g * lt.value;
        Ok(StateEval {
            state,
            drift: DriftEval {
                drift,
                local_time: Some(lt.value),
            },
            log_target,
        })
    } else {
        let drift = state.coeffs.map(|x| -x);
        Ok(StateEval {
            state,
            drift: DriftEval {
                drift,
                local_time: None,
            },
            log_target: -half * sq,
        })
    }
}

/// Drift of the quantization dynamics at a state (convenience entry point;
/// coupling and mollifier variance come from the parameter record).
pub fn drift<T: Real>(
    state: &FieldState<T>,
    gb: &GramBasis<T>,
    params: &crate::model::ModelParams<T>,
) -> Result<DriftEval<T>> {
    Ok(eval_state(state.clone(), gb, params.epsilon, params.coupling)?.drift)
}

/// Standard-normal `d x N` noise matrix, filled component-major like the
/// prior sampler.
pub fn gaussian_matrix<T: Real, R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> DMatrix<T> {
    let mut z = DMatrix::<T>::zeros(d, n);
    for i in 0..d {
        for k in 0..n {
            z[(i, k)] = T::standard_normal(rng);
        }
    }
    z
}

/// Deterministic Euler-Maruyama map with the standardized noise injected:
/// `x' = x + dt b(x) + sqrt(2 dt) z`.
pub fn euler_map<T: Real>(eval: &StateEval<T>, dt: T, noise: &DMatrix<T>) -> FieldState<T> {
    let (d, n) = (eval.state.dim(), eval.state.basis_len());
    let noise_scale = (T::of(2.0) * dt).sqrt();
    let coeffs = DMatrix::from_fn(d, n, |i, k| {
        eval.state.coeffs[(i, k)] + dt * eval.drift.drift[(i, k)] + noise_scale * noise[(i, k)]
    });
    FieldState {
        coeffs,
        compute_time: eval.state.compute_time + dt,
    }
}

/// Euler-Maruyama step from a precomputed evaluation.
pub fn euler_from<T: Real, R: Rng + ?Sized>(
    eval: &StateEval<T>,
    dt: T,
    rng: &mut R,
) -> FieldState<T> {
    let z = gaussian_matrix::<T, R>(eval.state.dim(), eval.state.basis_len(), rng);
    euler_map(eval, dt, &z)
}

/// Deterministic Strang-splitting map with the standardized noise injected:
/// half interaction kick, exact Ornstein-Uhlenbeck flow
/// `e^{-dt} x + sqrt(1 - e^{-2 dt}) z`, half kick.
pub fn ou_split_map<T: Real>(
    state: &FieldState<T>,
    gb: &GramBasis<T>,
    epsilon: T,
    g: T,
    dt: T,
    noise: &DMatrix<T>,
) -> Result<FieldState<T>> {
    let (d, n) = (state.dim(), state.basis_len());
    let half_dt = T::of(0.5) * dt;
    let decay = (-dt).exp();
    let noise_scale = (T::one() - (-(dt + dt)).exp()).sqrt();

    let kick = |coeffs: &DMatrix<T>| -> Result<DMatrix<T>> {
        if g > T::zero() {
            let path = coeffs * gb.path_matrix();
            let lt = local_time_grad(&path, gb, epsilon)?;
            Ok(DMatrix::from_fn(d, n, |i, k| {
                coeffs[(i, k)] - half_dt * g * lt.grad[(i, k)]
            }))
        } else {
            Ok(coeffs.clone())
        }
    };

    let kicked = kick(&state.coeffs)?;
    let flowed =
        DMatrix::from_fn(d, n, |i, k| decay * kicked[(i, k)] + noise_scale * noise[(i, k)]);
    let coeffs = kick(&flowed)?;
    FieldState::new(coeffs, state.compute_time + dt)
}

/// Euler-Maruyama step.
pub fn step_euler<T: Real, R: Rng + ?Sized>(
    state: &FieldState<T>,
    gb: &GramBasis<T>,
    params: &crate::model::ModelParams<T>,
    cfg: &StepperConfig<T>,
    rng: &mut R,
) -> Result<FieldState<T>> {
    let eval = eval_state(state.clone(), gb, params.epsilon, cfg.g)?;
    Ok(euler_from(&eval, cfg.dt, rng))
}

/// Strang-splitting step. At g = 0 the one-step transition law from `x` is
/// exactly `Normal(e^{-dt} x, 1 - e^{-2 dt})` per coordinate.
pub fn step_ou_split<T: Real, R: Rng + ?Sized>(
    state: &FieldState<T>,
    gb: &GramBasis<T>,
    params: &crate::model::ModelParams<T>,
    cfg: &StepperConfig<T>,
    rng: &mut R,
) -> Result<FieldState<T>> {
    let z = gaussian_matrix::<T, R>(state.dim(), state.basis_len(), rng);
    ou_split_map(state, gb, params.epsilon, cfg.g, cfg.dt, &z)
}

/// Log density of the Langevin proposal `y ~ Normal(x + dt b(x), 2 dt I)`,
/// including the normalizing constant.
pub fn proposal_log_density<T: Real>(from: &StateEval<T>, to: &FieldState<T>, dt: T) -> T {
    let (d, n) = (from.state.dim(), from.state.basis_len());
    let four_dt = T::of(4.0) * dt;
    let mut sq = T::zero();
    for i in 0..d {
        for k in 0..n {
            let mean = from.state.coeffs[(i, k)] + dt * from.drift.drift[(i, k)];
            let dev = to.coeffs[(i, k)] - mean;
            sq += dev * dev;
        }
    }
    let dims = T::of((d * n) as f64);
    -sq / four_dt - T::of(0.5) * dims * (T::two_pi() * (dt + dt)).ln()
}

/// Metropolis log acceptance ratio between two evaluated states.
pub fn log_accept_ratio<T: Real>(cur: &StateEval<T>, prop: &StateEval<T>, dt: T) -> T {
    prop.log_target - cur.log_target + proposal_log_density(prop, &cur.state, dt)
        - proposal_log_density(cur, &prop.state, dt)
}

/// One MALA transition from a cached evaluation. Returns the next
/// evaluation (the proposal's evaluation is reused when accepted, so each
/// step costs one drift evaluation), the accept flag, and the log ratio.
pub fn mala_move<T: Real, R: Rng + ?Sized>(
    cur: &StateEval<T>,
    gb: &GramBasis<T>,
    epsilon: T,
    cfg: &StepperConfig<T>,
    rng: &mut R,
) -> Result<(StateEval<T>, bool, T)> {
    let dt = cfg.dt;
    let proposal = euler_from(cur, dt, rng);
    let prop_eval = eval_state(proposal, gb, epsilon, cfg.g)?;
    let log_alpha = log_accept_ratio(cur, &prop_eval, dt);
    let u = T::standard_uniform(rng);
    let accepted = log_alpha >= T::zero() || u.ln() < log_alpha;
    if accepted {
        Ok((prop_eval, true, log_alpha))
    } else {
        let mut stay = cur.clone();
        stay.state.compute_time = cur.state.compute_time + dt;
        Ok((stay, false, log_alpha))
    }
}

/// Metropolis-adjusted Langevin step (convenience entry point).
pub fn step_mala<T: Real, R: Rng + ?Sized>(
    state: &FieldState<T>,
    gb: &GramBasis<T>,
    params: &crate::model::ModelParams<T>,
    cfg: &StepperConfig<T>,
    rng: &mut R,
) -> Result<(FieldState<T>, bool, T)> {
    let cur = eval_state(state.clone(), gb, params.epsilon, cfg.g)?;
    let (next, accepted, log_alpha) = mala_move(&cur, gb, params.epsilon, cfg, rng)?;
    Ok((next.state, accepted, log_alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sample_prior;
    use crate::model::{ModelParams, RngStream};

    fn params(g: f64) -> ModelParams<f64> {
        ModelParams {
            hurst: 0.4,
            dim: 2,
            coupling: g,
            horizon: 1.0,
            epsilon: 0.05,
            basis_size: 6,
            grid_size: 16,
            dt: 0.1,
            seed: 123,
        }
        .validate()
        .unwrap()
    }

    fn basis(p: &ModelParams<f64>) -> GramBasis<f64> {
        GramBasis::from_params(p).unwrap()
    }

    #[test]
    fn free_drift_is_negated_coeffs() {
        let p = params(0.0);
        let gb = basis(&p);
        let mut rng = RngStream::new(1, 0).rng();
        let state = sample_prior(&gb, 2, &mut rng);
        let ev = drift(&state, &gb, &p).unwrap();
        for (d, c) in ev.drift.iter().zip(state.coeffs.iter()) {
            assert_eq!(d.to_bits(), (-c).to_bits());
        }
        assert!(ev.local_time.is_none());
    }

    #[test]
    fn drift_vanishes_at_zero_state() {
        let p = params(0.7);
        let gb = basis(&p);
        let state = FieldState::<f64>::zeros(2, gb.basis_len());
        let ev = drift(&state, &gb, &p).unwrap();
        assert!(ev.drift.iter().all(|&x| x == 0.0));
        assert!(ev.local_time.unwrap() > 0.0);
    }

    #[test]
    fn drift_matches_finite_differences() {
        let p = params(0.1);
        let gb = basis(&p);
        let mut rng = RngStream::new(2, 0).rng();
        let state = sample_prior(&gb, 2, &mut rng);
        let ev = drift(&state, &gb, &p).unwrap();
        let h = 1e-4;
        for i in 0..2 {
            for k in 0..gb.basis_len() {
                let mut up = state.clone();
                up.coeffs[(i, k)] += h;
                let mut dn = state.clone();
                dn.coeffs[(i, k)] -= h;
                let l_up =
                    crate::localtime::local_time_of_coeffs(&up.coeffs, &gb, p.epsilon).unwrap();
                let l_dn =
                    crate::localtime::local_time_of_coeffs(&dn.coeffs, &gb, p.epsilon).unwrap();
                let fd = -(state.coeffs[(i, k)] + p.coupling * (l_up - l_dn) / (2.0 * h));
                let scale = fd.abs().max(1e-6);
                assert!(
                    (ev.drift[(i, k)] - fd).abs() / scale < 1e-5,
                    "drift fd mismatch at ({i},{k}): {} vs {}",
                    ev.drift[(i, k)],
                    fd
                );
            }
        }
    }

    #[test]
    fn euler_is_continuous_in_dt() {
        let p = params(0.0);
        let gb = basis(&p);
        let mut rng = RngStream::new(3, 0).rng();
        let state = sample_prior(&gb, 2, &mut rng);
        let cfg = StepperConfig { scheme: Scheme::EulerMaruyama, dt: 1e-12, g: 0.0 };
        let mut step_rng = RngStream::new(3, 1).rng();
        let next = step_euler(&state, &gb, &p, &cfg, &mut step_rng).unwrap();
        for (a, b) in next.coeffs.iter().zip(state.coeffs.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn euler_is_deterministic_given_stream() {
        let p = params(0.1);
        let gb = basis(&p);
        let mut rng = RngStream::new(4, 0).rng();
        let state = sample_prior(&gb, 2, &mut rng);
        let cfg = StepperConfig { scheme: Scheme::EulerMaruyama, dt: 0.05, g: 0.1 };
        let a = step_euler(&state, &gb, &p, &cfg, &mut RngStream::new(4, 1).rng()).unwrap();
        let b = step_euler(&state, &gb, &p, &cfg, &mut RngStream::new(4, 1).rng()).unwrap();
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn ou_split_at_dt_zero_is_identity() {
        let p = params(0.3);
        let gb = basis(&p);
        let mut rng = RngStream::new(5, 0).rng();
        let state = sample_prior(&gb, 2, &mut rng);
        let cfg = StepperConfig { scheme: Scheme::OuSplitting, dt: 0.0, g: 0.3 };
        let next = step_ou_split(&state, &gb, &p, &cfg, &mut RngStream::new(5, 1).rng()).unwrap();
        for (a, b) in next.coeffs.iter().zip(state.coeffs.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mala_accepts_degenerate_self_move() {
        let p = params(0.2);
        let gb = basis(&p);
        let mut rng = RngStream::new(6, 0).rng();
        let state = sample_prior(&gb, 2, &mut rng);
        let cur = eval_state(state.clone(), &gb, p.epsilon, p.coupling).unwrap();
        let prop = eval_state(state, &gb, p.epsilon, p.coupling).unwrap();
        let log_alpha = log_accept_ratio(&cur, &prop, 0.05);
        assert_eq!(log_alpha, 0.0);
    }

    #[test]
    fn mala_detailed_balance_identity() {
        // pi(x) q(x->y) a(x->y) = pi(y) q(y->x) a(y->x), checked in log space
        let p = params(0.1);
        let gb = basis(&p);
        let dt = 0.05;
        let mut rng = RngStream::new(7, 0).rng();
        for _ in 0..100 {
            let x = sample_prior(&gb, 2, &mut rng);
            let y = sample_prior(&gb, 2, &mut rng);
            let ex = eval_state(x, &gb, p.epsilon, p.coupling).unwrap();
            let ey = eval_state(y, &gb, p.epsilon, p.coupling).unwrap();
            let fwd = log_accept_ratio(&ex, &ey, dt);
            let bwd = log_accept_ratio(&ey, &ex, dt);
            let lhs = ex.log_target + proposal_log_density(&ex, &ey.state, dt) + fwd.min(0.0);
            let rhs = ey.log_target + proposal_log_density(&ey, &ex.state, dt) + bwd.min(0.0);
            assert!(
                (lhs - rhs).abs() <= 1e-10,
                "detailed balance violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::EulerMaruyama, Scheme::OuSplitting, Scheme::Mala] {
            let parsed: Scheme = s.name().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert!("leapfrog".parse::<Scheme>().is_err());
    }
}
