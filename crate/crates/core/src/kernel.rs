//! Covariance kernel of fractional Brownian motion, the Gram matrix of
//! indicator functions on a function-time grid, and the truncated
//! orthonormal basis obtained from its eigendecomposition (discrete
//! Karhunen-Loeve).
//!
//! The basis columns `b_k` satisfy `b_k' G b_l = delta_kl`, so coefficients
//! in this basis are exactly the coordinates of a field in an orthonormal
//! system of the covariance inner product. `path_matrix[k][m]` is the dual
//! pairing of basis element `k` with the indicator of `[0, grid[m])`, which
//! reconstructs polymer paths from coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;

/// Eigenvalues below `PSD_TOL_FACTOR * lambda_max` count as numerically zero;
/// anything below the negative of that is a hard error. (Double precision;
/// wider tolerances apply automatically for narrower scalars.)
pub const PSD_TOL_FACTOR: f64 = 1e-10;

/// Entrywise tolerance on `basis' * gram * basis = I` in double precision.
pub const ORTHO_TOL: f64 = 1e-8;

fn psd_tol_factor<T: Real>() -> T {
    T::of(PSD_TOL_FACTOR).max(T::machine_epsilon() * T::of(1e3))
}

fn ortho_tol<T: Real>() -> T {
    T::of(ORTHO_TOL).max(T::machine_epsilon() * T::of(1e4))
}

/// Covariance of fractional Brownian motion:
/// `cov_H(s,t) = (t^2H + s^2H - |t-s|^2H) / 2`.
pub fn cov<T: Real>(hurst: T, s: T, t: T) -> Result<T> {
    if s < T::zero() || t < T::zero() {
        return Err(Error::Domain(format!(
            "cov requires s,t >= 0, got s={}, t={}",
            s.as_f64(),
            t.as_f64()
        )));
    }
    let two_h = hurst + hurst;
    let half = T::of(0.5);
    Ok(half * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Pairwise covariances of a strictly increasing grid of positive times.
pub fn gram_matrix<T: Real>(hurst: T, grid: &[T]) -> Result<DMatrix<T>> {
    check_grid(grid)?;
    let m = grid.len();
    let mut gram = DMatrix::<T>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = cov(hurst, grid[i], grid[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}

fn check_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain("grid must be non-empty".into()));
    }
    if !(grid[0] > T::zero()) {
        return Err(Error::Domain("grid entries must be > 0".into()));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Domain(format!(
                "grid must be strictly increasing, got {} then {}",
                w[0].as_f64(),
                w[1].as_f64()
            )));
        }
    }
    Ok(())
}

/// Leading eigenpairs of a symmetric PSD matrix, whitened so the columns are
/// orthonormal under the matrix itself.
#[derive(Clone, Debug)]
pub struct EigenBasis<T: Real> {
    /// `M x N`; column `k` holds the indicator-coordinate coefficients of
    /// basis element `k`.
    pub basis: DMatrix<T>,
    /// The `N` leading eigenvalues, decreasing.
    pub eigenvalues: Vec<T>,
}

/// Builds the `N` leading eigenvectors of `gram`, scaled by inverse
/// square-root eigenvalues so that `basis' * gram * basis = I`.
///
/// Ordering is by decreasing eigenvalue with index order breaking ties, and
/// each column is sign-normalized so its first entry of non-negligible
/// magnitude is positive, which pins the construction down uniquely.
pub fn eigen_basis<T: Real>(gram: &DMatrix<T>, n: usize) -> Result<EigenBasis<T>> {
    let m = gram.nrows();
    if gram.ncols() != m {
        return Err(Error::Shape(format!(
            "gram must be square, got {}x{}",
            m,
            gram.ncols()
        )));
    }
    let sym_tol = T::of(1e-12);
    for i in 0..m {
        for j in 0..i {
            let d = (gram[(i, j)] - gram[(j, i)]).abs();
            let scale = T::one().max(gram[(i, j)].abs());
            if d > sym_tol * scale {
                return Err(Error::Domain("gram matrix is not symmetric".into()));
            }
        }
    }

    let eig = gram.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
            .then(a.cmp(&b))
    });

    let lambda_max = eig.eigenvalues[order[0]];
    if !(lambda_max > T::zero()) {
        return Err(Error::Rank("gram matrix has no positive eigenvalue".into()));
    }
    let tol_psd = psd_tol_factor::<T>() * lambda_max;
    let lambda_min = eig.eigenvalues[order[m - 1]];
    if lambda_min < -tol_psd {
        return Err(Error::Domain(format!(
            "gram matrix is not PSD: eigenvalue {} below -{}",
            lambda_min.as_f64(),
            tol_psd.as_f64()
        )));
    }

    let usable = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > tol_psd)
        .count();
    if usable < n {
        return Err(Error::Rank(format!(
            "requested N={} basis elements but only {} eigenvalues exceed tol_psd",
            n, usable
        )));
    }

    let mut basis = DMatrix::<T>::zeros(m, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (k, &idx) in order.iter().take(n).enumerate() {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda);
        let col = eig.eigenvectors.column(idx);
        let scale = T::one() / lambda.sqrt();
        let max_abs = col.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
        let sign_cut = T::of(1e-12) * max_abs;
        let mut sign = T::one();
        for &x in col.iter() {
            if x.abs() > sign_cut {
                if x < T::zero() {
                    sign = -T::one();
                }
                break;
            }
        }
        for i in 0..m {
            basis[(i, k)] = col[i] * scale * sign;
        }
    }
    Ok(EigenBasis { basis, eigenvalues })
}

/// Discrete Karhunen-Loeve truncation of the field's Hilbert space on a
/// fixed grid. Immutable after construction.
#[derive(Clone, Debug)]
pub struct GramBasis<T: Real> {
    grid: Vec<T>,
    hurst: T,
    gram: DMatrix<T>,
    basis: DMatrix<T>,
    path_matrix: DMatrix<T>,
    eigenvalues: Vec<T>,
}

impl<T: Real> GramBasis<T> {
    /// Builds gram matrix, truncated basis and path-evaluation matrix for a
    /// strictly increasing grid of positive times.
    pub fn build(hurst: T, grid: Vec<T>, n: usize) -> Result<Self> {
        let gram = gram_matrix(hurst, &grid)?;
        Self::from_gram(hurst, grid, gram, n)
    }

    /// Uniform-grid construction straight from a parameter record.
    pub fn from_params(params: &ModelParams<T>) -> Result<Self> {
        Self::build(params.hurst, params.uniform_grid(), params.basis_size)
    }

    pub fn from_gram(hurst: T, grid: Vec<T>, gram: DMatrix<T>, n: usize) -> Result<Self> {
        if gram.nrows() != grid.len() {
            return Err(Error::Shape(format!(
                "gram is {}x{} but grid has {} points",
                gram.nrows(),
                gram.ncols(),
                grid.len()
            )));
        }
        let eb = eigen_basis(&gram, n)?;
        let path_matrix = eb.basis.transpose() * &gram;
        let gb = Self {
            grid,
            hurst,
            gram,
            basis: eb.basis,
            path_matrix,
            eigenvalues: eb.eigenvalues,
        };
        let defect = gb.orthonormality_defect();
        if defect > ortho_tol::<T>() {
            return Err(Error::Rank(format!(
                "basis failed orthonormality check: defect {} > {}",
                defect.as_f64(),
                ORTHO_TOL
            )));
        }
        Ok(gb)
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn hurst(&self) -> T {
        self.hurst
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    /// `N x M` matrix of pairings of basis elements with grid indicators.
    pub fn path_matrix(&self) -> &DMatrix<T> {
        &self.path_matrix
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// Number of grid points `M`.
    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Truncation size `N`.
    pub fn basis_len(&self) -> usize {
        self.basis.ncols()
    }

    /// Grid spacing; errors unless the grid is uniform (starting at one
    /// spacing from zero), which the local-time quadrature requires.
    pub fn uniform_spacing(&self) -> Result<T> {
        let step = self.grid[0];
        let tol = T::of(1e-9) * step;
        for (i, &tau) in self.grid.iter().enumerate() {
            let expect = step * T::of((i + 1) as f64);
            if (tau - expect).abs() > tol {
                return Err(Error::Domain(
                    "grid is not uniform; local-time quadrature requires a uniform grid".into(),
                ));
            }
        }
        Ok(step)
    }

    /// Max entrywise deviation of `basis' * gram * basis` from the identity.
    pub fn orthonormality_defect(&self) -> T {
        let prod = self.basis.transpose() * &self.gram * &self.basis;
        let n = prod.nrows();
        let mut worst = T::zero();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Truncated Parseval defect: worst-case over grid points of the dropped
    /// variance `|gram[m][m] - sum_k path_matrix[k][m]^2|`.
    pub fn reconstruction_error(&self) -> T {
        let m = self.grid.len();
        let n = self.basis_len();
        let mut worst = T::zero();
        for j in 0..m {
            let mut acc = T::zero();
            for k in 0..n {
                let v = self.path_matrix[(k, j)];
                acc += v * v;
            }
            worst = worst.max((self.gram[(j, j)] - acc).abs());
        }
        worst
    }

    /// Serializable snapshot for caching; key is `(H, grid, N)`.
    pub fn to_file(&self) -> GramBasisFile<T> {
        GramBasisFile {
            format: GRAM_BASIS_FORMAT.to_string(),
            cache_key: cache_key(self.hurst, &self.grid, self.basis_len()),
            hurst: self.hurst,
            m: self.grid_len(),
            n: self.basis_len(),
            grid: self.grid.clone(),
            gram: row_major(&self.gram),
            basis: row_major(&self.basis),
            path_matrix: row_major(&self.path_matrix),
            eigenvalues: self.eigenvalues.clone(),
            psd_tol_factor: PSD_TOL_FACTOR,
            ortho_tol: ORTHO_TOL,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GramBasisFile<T> = serde_json::from_str(&text)?;
        file.into_basis()
    }
}

pub const GRAM_BASIS_FORMAT: &str = "gram-basis/1";

/// On-disk JSON container for a [`GramBasis`]; matrices are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramBasisFile<T> {
    pub format: String,
    pub cache_key: String,
    pub hurst: T,
    pub m: usize,
    pub n: usize,
    pub grid: Vec<T>,
    pub gram: Vec<T>,
    pub basis: Vec<T>,
    pub path_matrix: Vec<T>,
    pub eigenvalues: Vec<T>,
    pub psd_tol_factor: f64,
    pub ortho_tol: f64,
}

impl<T: Real> GramBasisFile<T> {
    pub fn into_basis(self) -> Result<GramBasis<T>> {
        if self.format != GRAM_BASIS_FORMAT {
            return Err(Error::Config(format!(
                "unsupported gram-basis container format {:?}",
                self.format
            )));
        }
        let expect = cache_key(self.hurst, &self.grid, self.n);
        if expect != self.cache_key {
            return Err(Error::Config(
                "gram-basis cache key does not match (H, grid, N) content".into(),
            ));
        }
        let gram = from_row_major(&self.gram, self.m, self.m)?;
        let basis = from_row_major(&self.basis, self.m, self.n)?;
        let path_matrix = from_row_major(&self.path_matrix, self.n, self.m)?;
        let gb = GramBasis {
            grid: self.grid,
            hurst: self.hurst,
            gram,
            basis,
            path_matrix,
            eigenvalues: self.eigenvalues,
        };
        if gb.orthonormality_defect() > ortho_tol::<T>() {
            return Err(Error::Rank(
                "loaded gram-basis container fails orthonormality check".into(),
            ));
        }
        Ok(gb)
    }
}

/// Cache key over the exact bit patterns of `(H, grid, N)`.
pub fn cache_key<T: Real>(hurst: T, grid: &[T], n: usize) -> String {
    let mut bytes = Vec::with_capacity(8 * (grid.len() + 2));
    bytes.extend_from_slice(&hurst.as_f64().to_bits().to_le_bytes());
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    for &tau in grid {
        bytes.extend_from_slice(&tau.as_f64().to_bits().to_le_bytes());
    }
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in &bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

fn row_major<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn from_row_major<T: Real>(data: &[T], rows: usize, cols: usize) -> Result<DMatrix<T>> {
    if data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "expected {}x{}={} entries, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cov_reduces_to_min_at_half() {
        // H = 1/2 collapses the kernel to min(s,t)
        assert!((cov(0.5f64, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((cov(0.5f64, 3.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cov_diagonal_is_power_law() {
        let v = cov(0.4f64, 2.0, 2.0).unwrap();
        assert!((v - 2.0f64.powf(0.8)).abs() < 1e-15);
        assert!((v - 1.7411011265922482).abs() < 1e-12);
    }

    #[test]
    fn cov_vanishes_at_zero() {
        assert_eq!(cov(0.3f64, 0.0, 5.0).unwrap(), 0.0);
        assert_eq!(cov(0.7f64, 4.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn cov_rejects_negative_times() {
        assert!(cov(0.5f64, -1.0, 2.0).is_err());
        assert!(cov(0.5f64, 1.0, -2.0).is_err());
    }

    #[test]
    fn cov_is_exactly_symmetric() {
        for &(s, t) in &[(0.3, 1.7), (2.0, 2.0), (0.01, 9.5)] {
            let a = cov(0.37f64, s, t).unwrap();
            let b = cov(0.37f64, t, s).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gram_examples() {
        let g = gram_matrix(0.5f64, &[1.0, 2.0]).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((g[(1, 1)] - 2.0).abs() < 1e-15);

        let g1 = gram_matrix(0.33f64, &[1.0]).unwrap();
        assert!((g1[(0, 0)] - 1.0).abs() < 1e-15);

        // Frozen from independent evaluation of (1 + 2^0.8 - 1)/2 and 2^0.8.
        let g04 = gram_matrix(0.4f64, &[1.0, 2.0]).unwrap();
        assert!((g04[(0, 1)] - 0.8705505632961241).abs() < 1e-12);
        assert!((g04[(1, 0)] - 0.8705505632961241).abs() < 1e-12);
        assert!((g04[(1, 1)] - 1.7411011265922482).abs() < 1e-12);
    }

    #[test]
    fn gram_rejects_non_monotone_grid() {
        assert!(gram_matrix(0.5f64, &[1.0, 1.0]).is_err());
        assert!(gram_matrix(0.5f64, &[2.0, 1.0]).is_err());
        assert!(gram_matrix(0.5f64, &[0.0, 1.0]).is_err());
        assert!(gram_matrix::<f64>(0.5, &[]).is_err());
    }

    #[test]
    fn eigen_basis_identity_gram() {
        let gram = DMatrix::<f64>::identity(2, 2);
        let eb = eigen_basis(&gram, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((eb.basis[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_basis_diagonal_gram() {
        let gram = DMatrix::<f64>::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let eb = eigen_basis(&gram, 1).unwrap();
        assert!((eb.basis[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(eb.basis[(1, 0)].abs() < 1e-12);
        assert!((eb.eigenvalues[0] - 4.0).abs() < 1e-12);

        let gb = GramBasis::from_gram(0.5, vec![1.0, 2.0], gram, 1).unwrap();
        assert!((gb.path_matrix()[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(gb.path_matrix()[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn eigen_basis_rank_error() {
        // rank-1 matrix cannot supply two basis elements
        let gram = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match eigen_basis(&gram, 2) {
            Err(Error::Rank(_)) => {}
            other => panic!("expected RankError, got {other:?}"),
        }
    }

    #[test]
    fn orthonormality_on_fbm_gram() {
        let grid: Vec<f64> = (1..=64).map(|i| i as f64 / 64.0).collect();
        let gb = GramBasis::build(0.4, grid, 8).unwrap();
        assert!(gb.orthonormality_defect() < 1e-8);
    }

    #[test]
    fn reconstruction_error_examples() {
        let full = GramBasis::from_gram(0.5, vec![1.0, 2.0], DMatrix::identity(2, 2), 2).unwrap();
        assert!(full.reconstruction_error() < 1e-12);

        let gram = DMatrix::<f64>::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let trunc = GramBasis::from_gram(0.5, vec![1.0, 2.0], gram, 1).unwrap();
        assert!((trunc.reconstruction_error() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_error_decreases_with_n() {
        let grid: Vec<f64> = (1..=64).map(|i| i as f64 / 64.0).collect();
        let coarse = GramBasis::build(0.4, grid.clone(), 8).unwrap();
        let fine = GramBasis::build(0.4, grid, 32).unwrap();
        assert!(fine.reconstruction_error() < coarse.reconstruction_error());
    }

    #[test]
    fn container_round_trip() {
        let grid: Vec<f64> = (1..=16).map(|i| i as f64 / 16.0).collect();
        let gb = GramBasis::build(0.4, grid, 6).unwrap();
        let file = gb.to_file();
        let back = file.into_basis().unwrap();
        assert_eq!(gb.path_matrix(), back.path_matrix());
        assert_eq!(gb.basis(), back.basis());
    }

    #[test]
    fn container_rejects_tampered_key() {
        let grid: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
        let gb = GramBasis::build(0.4, grid, 4).unwrap();
        let mut file = gb.to_file();
        file.hurst = 0.41;
        assert!(file.into_basis().is_err());
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        fn grids() -> impl Strategy<Value = Vec<f64>> {
            // strictly increasing positive grids with up to 64 points
            proptest::collection::vec(1e-3f64..1.0, 2..64).prop_map(|mut gaps| {
                let mut acc = 0.0;
                for g in gaps.iter_mut() {
                    acc += *g;
                    *g = acc;
                }
                gaps
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn cov_symmetric_and_diagonal(
                h in prop::sample::select(vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
                s in 0.0f64..10.0,
                t in 0.0f64..10.0,
            ) {
                let a = cov(h, s, t).unwrap();
                let b = cov(h, t, s).unwrap();
                prop_assert_eq!(a.to_bits(), b.to_bits());
                let diag = cov(h, t, t).unwrap();
                prop_assert!((diag - t.powf(2.0 * h)).abs() <= 1e-12 * diag.abs().max(1.0));
            }

            /// Stationary increments: cov(t+h,t+h) - 2 cov(t+h,t) + cov(t,t) = h^2H.
            #[test]
            fn cov_has_stationary_increments(
                hurst in prop::sample::select(vec![0.2, 0.35, 0.5, 0.65, 0.8]),
                t in 0.0f64..8.0,
                lag in 1e-3f64..4.0,
            ) {
                let var_inc = cov(hurst, t + lag, t + lag).unwrap()
                    - 2.0 * cov(hurst, t + lag, t).unwrap()
                    + cov(hurst, t, t).unwrap();
                let expect = lag.powf(2.0 * hurst);
                prop_assert!(
                    (var_inc - expect).abs() <= 1e-12 * expect.max(1.0),
                    "increment variance {} vs {}", var_inc, expect
                );
            }

            #[test]
            fn gram_is_psd_within_tolerance(
                h in prop::sample::select(vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
                grid in grids(),
            ) {
                let gram = gram_matrix(h, &grid).unwrap();
                let eig = gram.clone().symmetric_eigen();
                let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
                let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
                prop_assert!(
                    lambda_min >= -PSD_TOL_FACTOR * lambda_max,
                    "min eigenvalue {} vs max {}", lambda_min, lambda_max
                );
            }

            /// Every constructible basis is orthonormal under the gram inner
            /// product and its Parseval defect shrinks as N grows.
            #[test]
            fn basis_orthonormal_on_random_grids(
                h in prop::sample::select(vec![0.25, 0.4, 0.6, 0.75]),
                grid in grids(),
            ) {
                let m = grid.len();
                let n = (m / 2).max(1);
                if let Ok(gb) = GramBasis::build(h, grid, n) {
                    prop_assert!(gb.orthonormality_defect() < 1e-8);
                }
            }
        }
    }
}
