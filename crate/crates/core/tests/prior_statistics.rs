//! Monte-Carlo checks of the prior sampler against the covariance kernel:
//! coordinate moments, per-time path variance, and the increment moment
//! E[(B_{t+h} - B_t)^2] = h^(2H) under the full basis.

use edwards::field::{polymer_path, sample_prior};
use edwards::kernel::{cov, GramBasis};
use edwards::model::RngStream;

const DRAWS: usize = 100_000;

#[test]
fn prior_coordinates_are_standard_normal_and_independent() {
    let grid: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
    let gb = GramBasis::build(0.4, grid, 6).unwrap();
    let (d, n) = (2usize, 6usize);
    let dims = d * n;

    let mut sums = vec![0.0f64; dims];
    let mut sq_sums = vec![0.0f64; dims];
    let mut cross = 0.0f64; // one representative off-diagonal pair
    let mut rng = RngStream::new(2024, 0).rng();
    for _ in 0..DRAWS {
        let state = sample_prior(&gb, d, &mut rng);
        for i in 0..d {
            for k in 0..n {
                let v = state.coeffs[(i, k)];
                sums[i * n + k] += v;
                sq_sums[i * n + k] += v * v;
            }
        }
        cross += state.coeffs[(0, 0)] * state.coeffs[(1, 3)];
    }

    let tol_mean = 4.0 / (DRAWS as f64).sqrt();
    for idx in 0..dims {
        let mean = sums[idx] / DRAWS as f64;
        let var = sq_sums[idx] / DRAWS as f64 - mean * mean;
        assert!(mean.abs() < tol_mean, "coordinate {idx} mean {mean}");
        assert!((var - 1.0).abs() < 5e-2, "coordinate {idx} variance {var}");
    }
    let cov_hat = cross / DRAWS as f64;
    assert!(cov_hat.abs() < tol_mean, "cross covariance {cov_hat}");
}

#[test]
fn full_basis_path_variance_matches_covariance() {
    let m = 16usize;
    let h = 0.4f64;
    let grid: Vec<f64> = (1..=m).map(|i| i as f64 / m as f64).collect();
    let gb = GramBasis::build(h, grid.clone(), m).unwrap();

    let mut sq = vec![0.0f64; m];
    let mut rng = RngStream::new(7, 0).rng();
    for _ in 0..DRAWS {
        let state = sample_prior(&gb, 1, &mut rng);
        let path = polymer_path(&state, &gb).unwrap();
        for (j, s) in sq.iter_mut().enumerate() {
            *s += path[(0, j)] * path[(0, j)];
        }
    }
    for j in 0..m {
        let var_hat = sq[j] / DRAWS as f64;
        let var = cov(h, grid[j], grid[j]).unwrap();
        // variance of a squared-normal mean: 3 SE = 3 var sqrt(2/n)
        let tol = 3.0 * var * (2.0 / DRAWS as f64).sqrt();
        assert!(
            (var_hat - var).abs() < tol,
            "grid point {j}: {var_hat} vs {var}"
        );
    }
}

#[test]
fn full_basis_increments_scale_like_h_2h() {
    let m = 16usize;
    let h = 0.3f64;
    let grid: Vec<f64> = (1..=m).map(|i| i as f64 / m as f64).collect();
    let gb = GramBasis::build(h, grid.clone(), m).unwrap();

    // grid-aligned (t, t+lag) pairs
    let pairs = [(3usize, 7usize), (1, 9), (5, 6), (0, 15)];
    let mut sq = vec![0.0f64; pairs.len()];
    let mut rng = RngStream::new(8, 0).rng();
    for _ in 0..DRAWS {
        let state = sample_prior(&gb, 1, &mut rng);
        let path = polymer_path(&state, &gb).unwrap();
        for (slot, &(a, b)) in pairs.iter().enumerate() {
            let inc = path[(0, b)] - path[(0, a)];
            sq[slot] += inc * inc;
        }
    }
    for (slot, &(a, b)) in pairs.iter().enumerate() {
        let lag = grid[b] - grid[a];
        let expect = lag.powf(2.0 * h);
        let got = sq[slot] / DRAWS as f64;
        let tol = 3.0 * expect * (2.0 / DRAWS as f64).sqrt();
        assert!(
            (got - expect).abs() < tol,
            "increment ({a},{b}): {got} vs {expect}"
        );
    }
}
