//! The whole pipeline is generic over the scalar: exercise the f32
//! instantiation end to end and check it tracks the f64 one at single
//! precision.

use edwards::chain::{run_chain, ChainSettings};
use edwards::dynamics::{Scheme, StepperConfig};
use edwards::kernel::GramBasis;
use edwards::localtime::local_time;
use edwards::model::ModelParams;
use edwards::observables::Builtin;

fn params<T: edwards::Real>(seed: u64) -> ModelParams<T> {
    ModelParams {
        hurst: T::of(0.4),
        dim: 2,
        coupling: T::of(0.1),
        horizon: T::of(1.0),
        epsilon: T::of(0.05),
        basis_size: 4,
        grid_size: 12,
        dt: T::of(0.05),
        seed,
    }
    .validate()
    .unwrap()
}

#[test]
fn f32_pipeline_runs_and_tracks_f64() {
    let p32 = params::<f32>(11);
    let p64 = params::<f64>(11);
    let gb32 = GramBasis::from_params(&p32).unwrap();
    let gb64 = GramBasis::from_params(&p64).unwrap();
    assert!(gb32.orthonormality_defect() < 1e-3);

    // the local time of the same (representable) path agrees across scalars
    let path64 = nalgebra::DMatrix::<f64>::from_fn(2, 12, |i, j| {
        ((i + 2 * j) as f64 * 0.125).sin()
    });
    let path32 = path64.map(|x| x as f32);
    let l64 = local_time(&path64, 0.05, gb64.grid()).unwrap();
    let l32 = local_time(&path32, 0.05f32, gb32.grid()).unwrap();
    assert!(
        ((l32 as f64 - l64) / l64).abs() < 1e-4,
        "f32 local time {l32} vs f64 {l64}"
    );

    // a short MALA chain runs without leaving the f32 domain
    let settings = ChainSettings {
        cfg: StepperConfig::new(Scheme::Mala, p32.dt, p32.coupling).unwrap(),
        steps: 200,
        thin: 100,
        observables: vec![Builtin::PairingSquared, Builtin::LocalTime],
        tracked: vec![(0, 0)],
    };
    let record = run_chain(&p32, &gb32, settings, p32.chain_stream(0)).unwrap();
    assert_eq!(record.steps, 200);
    assert!(record.max_mean_square.is_finite());
    assert!(record.acceptance_rate.unwrap() > 0.5);
}
