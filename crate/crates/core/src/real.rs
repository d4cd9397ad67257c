//! Scalar abstraction: every numerical module is generic over a real type
//! (`f32` or `f64`); concrete aliases live at the crate root.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable by the simulator: field arithmetic plus
/// primitive conversions and standard-normal sampling.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Serialize + DeserializeOwned + Send + Sync
{
    /// Lossy conversion from `f64`, for literals and tolerances.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Machine epsilon of the scalar, for precision-scaled tolerances.
    fn machine_epsilon() -> Self;

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Real converts to f64")
    }

    /// One standard-normal draw. All randomness in the crate funnels through
    /// this and [`Real::standard_uniform`] so the consumed RNG word count is
    /// identical across runs with equal seeds.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw on `[0, 1)`.
    fn standard_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn standard_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

impl Real for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn standard_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(1.5), 1.5);
        assert_eq!(f32::of(0.25), 0.25f32);
        assert_eq!(2.0f64.as_f64(), 2.0);
    }
}
