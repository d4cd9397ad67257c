//! The finite-difference oracle for the analytic local-time gradient:
//! agreement at h = 1e-4 on random prior states, and second-order
//! convergence of the deviation as h shrinks.

use edwards::field::sample_prior;
use edwards::kernel::GramBasis;
use edwards::localtime::local_time_grad;
use edwards::model::{ModelParams, RngStream};
use edwards::oracle::fd_gradient;
use edwards::stats::ols_slope;

fn params() -> ModelParams<f64> {
    ModelParams {
        hurst: 0.4,
        dim: 2,
        coupling: 0.1,
        horizon: 1.0,
        epsilon: 0.05,
        basis_size: 6,
        grid_size: 24,
        dt: 0.1,
        seed: 5150,
    }
    .validate()
    .unwrap()
}

fn rel_deviation(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    (num / den).sqrt()
}

#[test]
fn analytic_gradient_matches_fd_oracle() {
    let p = params();
    let gb = GramBasis::from_params(&p).unwrap();
    let mut rng = RngStream::new(1, 0).rng();
    for _ in 0..20 {
        let state = sample_prior(&gb, p.dim, &mut rng);
        let path = &state.coeffs * gb.path_matrix();
        let analytic = local_time_grad(&path, &gb, p.epsilon).unwrap().grad;
        let fd = fd_gradient(&state, &gb, &p, 1e-4).unwrap();
        let rel = rel_deviation(&fd, &analytic);
        assert!(rel <= 1e-5, "relative FD deviation {rel}");
    }
}

#[test]
fn fd_deviation_converges_at_second_order() {
    let p = params();
    let gb = GramBasis::from_params(&p).unwrap();
    let mut rng = RngStream::new(2, 0).rng();
    let state = sample_prior(&gb, p.dim, &mut rng);
    let path = &state.coeffs * gb.path_matrix();
    let analytic = local_time_grad(&path, &gb, p.epsilon).unwrap().grad;

    let hs = [2e-1, 1e-1, 5e-2, 2.5e-2, 1.25e-2];
    let mut log_h = Vec::new();
    let mut log_err = Vec::new();
    for &h in &hs {
        let fd = fd_gradient(&state, &gb, &p, h).unwrap();
        let dev = rel_deviation(&fd, &analytic);
        log_h.push(h.ln());
        log_err.push(dev.ln());
    }
    let (slope, _) = ols_slope(&log_h, &log_err).unwrap();
    assert!(slope >= 1.9, "FD convergence slope {slope}");

    // halving h quarters the deviation, within 20 percent
    for w in log_err.windows(2) {
        let ratio = (w[0] - w[1]).exp();
        assert!(
            (ratio - 4.0).abs() < 0.8,
            "halving ratio {ratio} not close to 4"
        );
    }
}
