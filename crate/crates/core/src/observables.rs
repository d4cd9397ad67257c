//! Observable vocabulary shared by the samplers, the oracle, and the
//! diagnostics: built-in observables carry exact directional derivatives,
//! user-supplied ones fall back to central finite differences.

use crate::error::{Error, Result};
use crate::field::FieldState;
use crate::kernel::GramBasis;
use crate::localtime::{local_time_grad, local_time_of_coeffs};
use crate::real::Real;

/// Step used by the default finite-difference directional derivative.
pub const FD_STEP: f64 = 1e-4;

/// A scalar function of the field state.
pub trait Observable<T: Real>: Sync {
    fn name(&self) -> String;

    fn eval(&self, state: &FieldState<T>, gb: &GramBasis<T>, epsilon: T) -> Result<T>;

    /// Directional derivative along basis element `k` of spatial component
    /// `component`. The default is a central finite difference with step
    /// [`FD_STEP`]; built-ins override it with closed forms.
    fn dir_deriv(
        &self,
        state: &FieldState<T>,
        gb: &GramBasis<T>,
        epsilon: T,
        component: usize,
        k: usize,
    ) -> Result<T> {
        let h = T::of(FD_STEP);
        let mut up = state.clone();
        up.coeffs[(component, k)] += h;
        let mut dn = state.clone();
        dn.coeffs[(component, k)] -= h;
        Ok((self.eval(&up, gb, epsilon)? - self.eval(&dn, gb, epsilon)?) / (h + h))
    }
}

/// The fixed harness vocabulary:
/// `f1` squared pairing with the leading basis element (component 0),
/// `f2` the mollified local time,
/// `f3` the squared end-to-end distance of the polymer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    PairingSquared,
    LocalTime,
    EndToEndSquared,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [
        Builtin::PairingSquared,
        Builtin::LocalTime,
        Builtin::EndToEndSquared,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "f1" => Ok(Builtin::PairingSquared),
            "f2" => Ok(Builtin::LocalTime),
            "f3" => Ok(Builtin::EndToEndSquared),
            other => Err(Error::Config(format!(
                "unknown observable {other:?}; expected f1 | f2 | f3"
            ))),
        }
    }

    fn end_to_end<T: Real>(state: &FieldState<T>, gb: &GramBasis<T>) -> (T, Vec<T>) {
        let m = gb.grid_len();
        let pm = gb.path_matrix();
        let mut sq = T::zero();
        let mut ends = Vec::with_capacity(state.dim());
        for i in 0..state.dim() {
            let mut x = T::zero();
            for k in 0..state.basis_len() {
                x += state.coeffs[(i, k)] * pm[(k, m - 1)];
            }
            sq += x * x;
            ends.push(x);
        }
        (sq, ends)
    }
}

impl<T: Real> Observable<T> for Builtin {
    fn name(&self) -> String {
        match self {
            Builtin::PairingSquared => "f1".into(),
            Builtin::LocalTime => "f2".into(),
            Builtin::EndToEndSquared => "f3".into(),
        }
    }

    fn eval(&self, state: &FieldState<T>, gb: &GramBasis<T>, epsilon: T) -> Result<T> {
        match self {
            Builtin::PairingSquared => {
                let c = state.coeffs[(0, 0)];
                Ok(c * c)
            }
            Builtin::LocalTime => local_time_of_coeffs(&state.coeffs, gb, epsilon),
            Builtin::EndToEndSquared => Ok(Self::end_to_end(state, gb).0),
        }
    }

    fn dir_deriv(
        &self,
        state: &FieldState<T>,
        gb: &GramBasis<T>,
        epsilon: T,
        component: usize,
        k: usize,
    ) -> Result<T> {
        match self {
            Builtin::PairingSquared => Ok(if component == 0 && k == 0 {
                state.coeffs[(0, 0)] + state.coeffs[(0, 0)]
            } else {
                T::zero()
            }),
            Builtin::LocalTime => {
                let path = &state.coeffs * gb.path_matrix();
                let lt = local_time_grad(&path, gb, epsilon)?;
                Ok(lt.grad[(component, k)])
            }
            Builtin::EndToEndSquared => {
                let (_, ends) = Self::end_to_end(state, gb);
                let pm_end = gb.path_matrix()[(k, gb.grid_len() - 1)];
                Ok(T::of(2.0) * ends[component] * pm_end)
            }
        }
    }
}

/// Coordinate observable `omega_{component,k}`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate {
    pub component: usize,
    pub index: usize,
}

impl<T: Real> Observable<T> for Coordinate {
    fn name(&self) -> String {
        format!("coord_{}_{}", self.component, self.index)
    }

    fn eval(&self, state: &FieldState<T>, _gb: &GramBasis<T>, _epsilon: T) -> Result<T> {
        if self.component >= state.dim() || self.index >= state.basis_len() {
            return Err(Error::Index(format!(
                "coordinate ({}, {}) out of range",
                self.component, self.index
            )));
        }
        Ok(state.coeffs[(self.component, self.index)])
    }

    fn dir_deriv(
        &self,
        _state: &FieldState<T>,
        _gb: &GramBasis<T>,
        _epsilon: T,
        component: usize,
        k: usize,
    ) -> Result<T> {
        Ok(if component == self.component && k == self.index {
            T::one()
        } else {
            T::zero()
        })
    }
}

/// Constant observable.
#[derive(Clone, Copy, Debug)]
pub struct Constant<T>(pub T);

impl<T: Real> Observable<T> for Constant<T> {
    fn name(&self) -> String {
        "constant".into()
    }

    fn eval(&self, _state: &FieldState<T>, _gb: &GramBasis<T>, _epsilon: T) -> Result<T> {
        Ok(self.0)
    }

    fn dir_deriv(
        &self,
        _state: &FieldState<T>,
        _gb: &GramBasis<T>,
        _epsilon: T,
        _component: usize,
        _k: usize,
    ) -> Result<T> {
        Ok(T::zero())
    }
}

/// User-supplied observable; derivatives go through the finite-difference
/// default.
pub struct UserFn<T, F>
where
    F: Fn(&FieldState<T>, &GramBasis<T>) -> T + Sync,
    T: Real,
{
    pub label: String,
    pub f: F,
    _marker: std::marker::PhantomData<T>,
}

impl<T, F> UserFn<T, F>
where
    F: Fn(&FieldState<T>, &GramBasis<T>) -> T + Sync,
    T: Real,
{
    pub fn new(label: impl Into<String>, f: F) -> Self {
        Self {
            label: label.into(),
            f,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T, F> Observable<T> for UserFn<T, F>
where
    F: Fn(&FieldState<T>, &GramBasis<T>) -> T + Sync,
    T: Real,
{
    fn name(&self) -> String {
        self.label.clone()
    }

    fn eval(&self, state: &FieldState<T>, gb: &GramBasis<T>, _epsilon: T) -> Result<T> {
        Ok((self.f)(state, gb))
    }
}
