//! Stochastic quantization of the weakly self-avoiding fractional-polymer
//! measure: the Gaussian law of fractional Brownian motion, reweighted by
//! `exp(-g L)` with `L` a mollified self-intersection local time, is
//! sampled by Langevin-type dynamics in a finite orthonormal truncation.
//!
//! The crate is organized around the pipeline
//! [`kernel`] (covariance and truncated basis) ->
//! [`field`] (states and polymer paths) ->
//! [`localtime`] (the interaction and its gradient) ->
//! [`dynamics`] / [`chain`] (samplers and recorded runs), with
//! [`oracle`] supplying importance-sampling ground truth and
//! [`diagnostics`] checking the structural identities of the target law.
//!
//! All numerics are generic over the scalar via [`real::Real`]; the
//! aliases below fix the default double-precision instantiation.

// validation uses `!(x > 0)` rather than `x <= 0` so NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod kernel;
pub mod localtime;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod real;
pub mod stats;

pub use error::{Error, Result};
pub use real::Real;

/// Default double-precision instantiations.
pub type ModelParams64 = model::ModelParams<f64>;
pub type GramBasis64 = kernel::GramBasis<f64>;
pub type FieldState64 = field::FieldState<f64>;
pub type LocalTimeEval64 = localtime::LocalTimeEval<f64>;
pub type DriftEval64 = dynamics::DriftEval<f64>;
pub type StepperConfig64 = dynamics::StepperConfig<f64>;
pub type ChainRecord64 = chain::ChainRecord<f64>;
pub type Checkpoint64 = chain::Checkpoint<f64>;
pub type WeightedEnsemble64 = oracle::WeightedEnsemble<f64>;
pub type OracleSummary64 = oracle::OracleSummary<f64>;
