//! Field state in orthonormal coordinates: prior sampling from the Gaussian
//! reference measure, dual pairings, and reconstruction of d-dimensional
//! polymer paths on the function-time grid.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::GramBasis;
use crate::real::Real;

/// Coefficients of the field in the orthonormal basis: row `i` holds the
/// coordinates of spatial component `i`. A value type; steppers construct
/// successor states instead of mutating.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState<T: Real> {
    /// `d x N` coefficient matrix.
    pub coeffs: DMatrix<T>,
    /// Compute time at which the state was produced.
    pub compute_time: T,
}

impl<T: Real> FieldState<T> {
    pub fn new(coeffs: DMatrix<T>, compute_time: T) -> Result<Self> {
        if coeffs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("field coefficients must be finite".into()));
        }
        Ok(Self {
            coeffs,
            compute_time,
        })
    }

    pub fn zeros(dim: usize, basis_len: usize) -> Self {
        Self {
            coeffs: DMatrix::zeros(dim, basis_len),
            compute_time: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn basis_len(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Mean squared coefficient `|coeffs|^2 / (d N)`, the boundedness
    /// statistic tracked by long runs.
    pub fn mean_square(&self) -> T {
        let n = T::of((self.dim() * self.basis_len()) as f64);
        self.coeffs.iter().fold(T::zero(), |a, &x| a + x * x) / n
    }
}

/// Draws the field prior: coefficients are i.i.d. standard normal in
/// orthonormal coordinates, filled row by row (component-major) so the
/// consumed RNG sequence is part of the reproducibility contract.
pub fn sample_prior<T: Real, R: Rng + ?Sized>(
    gb: &GramBasis<T>,
    dim: usize,
    rng: &mut R,
) -> FieldState<T> {
    let n = gb.basis_len();
    let mut coeffs = DMatrix::<T>::zeros(dim, n);
    for i in 0..dim {
        for k in 0..n {
            coeffs[(i, k)] = T::standard_normal(rng);
        }
    }
    FieldState {
        coeffs,
        compute_time: T::zero(),
    }
}

/// Dual pairing of one spatial component with a test element given by its
/// basis coefficients (Parseval form of the inner product).
pub fn pair<T: Real>(state: &FieldState<T>, component: usize, xi_coeffs: &[T]) -> Result<T> {
    if component >= state.dim() {
        return Err(Error::Index(format!(
            "component {} out of range for d={}",
            component,
            state.dim()
        )));
    }
    if xi_coeffs.len() != state.basis_len() {
        return Err(Error::Shape(format!(
            "xi has {} coefficients, state has {}",
            xi_coeffs.len(),
            state.basis_len()
        )));
    }
    let mut acc = T::zero();
    for (k, &xi) in xi_coeffs.iter().enumerate() {
        acc += state.coeffs[(component, k)] * xi;
    }
    Ok(acc)
}

/// Reconstructs the polymer path on the grid: `d x M` matrix whose column
/// `m` is the spatial position at function time `grid[m]`.
pub fn polymer_path<T: Real>(state: &FieldState<T>, gb: &GramBasis<T>) -> Result<DMatrix<T>> {
    if state.basis_len() != gb.basis_len() {
        return Err(Error::Shape(format!(
            "state has {} coefficients, basis has {}",
            state.basis_len(),
            gb.basis_len()
        )));
    }
    Ok(&state.coeffs * gb.path_matrix())
}

/// Path value at an off-grid time by linear interpolation between grid
/// columns (taking the path as 0 at function time 0). Diagnostic
/// convenience only; the dynamics never evaluates off the grid.
pub fn path_at<T: Real>(path: &DMatrix<T>, grid: &[T], tau: T) -> Result<Vec<T>> {
    if path.ncols() != grid.len() {
        return Err(Error::Shape("path columns must match grid".into()));
    }
    if tau < T::zero() || tau > grid[grid.len() - 1] {
        return Err(Error::Domain("tau outside [0, T]".into()));
    }
    let d = path.nrows();
    // locate the surrounding cell; grid is strictly increasing
    let mut hi = 0;
    while grid[hi] < tau {
        hi += 1;
    }
    let (lo_tau, hi_tau) = if hi == 0 {
        (T::zero(), grid[0])
    } else {
        (grid[hi - 1], grid[hi])
    };
    let w = (tau - lo_tau) / (hi_tau - lo_tau);
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let lo_val = if hi == 0 { T::zero() } else { path[(i, hi - 1)] };
        out.push(lo_val + w * (path[(i, hi)] - lo_val));
    }
    Ok(out)
}

/// Writes a path as CSV with header `tau,x1,...,xd`, one row per grid point,
/// 17 significant digits (lossless for f64).
pub fn write_path_csv<T: Real, W: Write>(
    path: &DMatrix<T>,
    grid: &[T],
    out: &mut W,
) -> Result<()> {
    if path.ncols() != grid.len() {
        return Err(Error::Shape("path columns must match grid".into()));
    }
    let d = path.nrows();
    let mut header = String::from("tau");
    for i in 1..=d {
        header.push_str(&format!(",x{i}"));
    }
    writeln!(out, "{header}")?;
    for (m, &tau) in grid.iter().enumerate() {
        let mut line = format!("{:.16e}", tau.as_f64());
        for i in 0..d {
            line.push_str(&format!(",{:.16e}", path[(i, m)].as_f64()));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a path CSV written by [`write_path_csv`]; returns `(grid, path)`.
pub fn read_path_csv<T: Real, R: BufRead>(input: R) -> Result<(Vec<T>, DMatrix<T>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty path CSV".into()))??;
    let cols = header.split(',').count();
    if cols < 2 || !header.starts_with("tau") {
        return Err(Error::Config("path CSV header must be tau,x1,...".into()));
    }
    let d = cols - 1;
    let mut grid = Vec::new();
    let mut rows: Vec<Vec<T>> = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Config("ragged path CSV row".into()));
        }
        let parse = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(T::of)
                .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
        };
        grid.push(parse(fields[0])?);
        rows.push(fields[1..].iter().map(|s| parse(s)).collect::<Result<_>>()?);
    }
    let m = grid.len();
    let path = DMatrix::from_fn(d, m, |i, j| rows[j][i]);
    Ok((grid, path))
}
