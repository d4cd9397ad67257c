//! Central parameter record, validation, and the deterministic RNG policy
//! shared by every module.
//!
//! All randomness is counter/stream based: a [`RngStream`] is `(seed,
//! stream_id)` and yields a reproducible generator whose position can be
//! captured and restored, so checkpointed runs replay bit-exactly and
//! parallel chains or oracle batches get statistically independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Physical and numerical configuration.
///
/// Wire names in config files are the short symbols (`H`, `d`, `g`, `T`,
/// `epsilon`, `N`, `M`, `dt`, `seed`); unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams<T> {
    /// Hurst parameter, `0 < H < 1`.
    #[serde(rename = "H")]
    pub hurst: T,
    /// Spatial dimension of the polymer, `d >= 1`. Subject to `d*H < 1`.
    #[serde(rename = "d")]
    pub dim: usize,
    /// Self-repulsion coupling, `g >= 0`.
    #[serde(rename = "g")]
    pub coupling: T,
    /// Function-time horizon, `T > 0`.
    #[serde(rename = "T")]
    pub horizon: T,
    /// Mollifier variance of the local-time kernel, `epsilon > 0`.
    pub epsilon: T,
    /// Basis truncation size, `1 <= N <= M`.
    #[serde(rename = "N")]
    pub basis_size: usize,
    /// Function-time grid size.
    #[serde(rename = "M")]
    pub grid_size: usize,
    /// Compute-time step of the samplers, `dt > 0`.
    pub dt: T,
    /// Base RNG seed; combined with a stream id per chain / oracle batch.
    pub seed: u64,
}

impl<T: Real> ModelParams<T> {
    /// Checks every structural invariant and returns the record unchanged.
    ///
    /// The strict inequality `d*H < 1` is enforced: equality is rejected
    /// because exponential integrability of the local time needs the open
    /// regime.
    pub fn validate(self) -> Result<Self> {
        let one = T::one();
        if !(self.hurst > T::zero() && self.hurst < one) {
            return Err(Error::Domain(format!(
                "H must lie in (0,1), got {}",
                self.hurst.as_f64()
            )));
        }
        if self.dim == 0 {
            return Err(Error::Domain("d must be a positive integer".into()));
        }
        let dh = T::of(self.dim as f64) * self.hurst;
        if !(dh < one) {
            return Err(Error::Domain(format!(
                "dH<1 violated: d*H = {}",
                dh.as_f64()
            )));
        }
        if !(self.coupling >= T::zero()) {
            return Err(Error::Domain("g must be >= 0".into()));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::Domain("T must be > 0".into()));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::Domain("epsilon must be > 0".into()));
        }
        if self.basis_size == 0 {
            return Err(Error::Domain("N must be a positive integer".into()));
        }
        if self.basis_size > self.grid_size {
            return Err(Error::Domain(format!(
                "N <= M violated: N = {}, M = {}",
                self.basis_size, self.grid_size
            )));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::Domain("dt must be > 0".into()));
        }
        if !self.hurst.is_finite()
            || !self.coupling.is_finite()
            || !self.horizon.is_finite()
            || !self.epsilon.is_finite()
            || !self.dt.is_finite()
        {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        Ok(self)
    }

    /// Parses a flat key-value JSON document with exactly the wire field
    /// names; unknown keys fail fast.
    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        params.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    /// Stable 64-bit content hash of the canonical JSON form, used to pair
    /// checkpoints and verify inputs with the configuration that wrote them.
    pub fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.to_json().as_bytes()))
    }

    /// Uniform function-time grid `(T/M, 2T/M, ..., T]`.
    pub fn uniform_grid(&self) -> Vec<T> {
        let m = self.grid_size;
        let step = self.horizon / T::of(m as f64);
        (1..=m).map(|i| step * T::of(i as f64)).collect()
    }

    /// Stream for chain `index` within this configuration.
    pub fn chain_stream(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, index)
    }

    /// Stream for oracle batch `index`; disjoint from all chain streams.
    pub fn oracle_stream(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, ORACLE_STREAM_BASE + index)
    }
}

/// First stream id reserved for oracle ensembles; chains count up from 0.
pub const ORACLE_STREAM_BASE: u64 = 1 << 32;

/// Deterministic generator handle: identical `(seed, stream_id)` give an
/// identical sequence, distinct stream ids give independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

/// The concrete generator; its word position is the resumable counter.
pub type SimRng = ChaCha12Rng;

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fresh generator at the start of the stream.
    pub fn rng(&self) -> SimRng {
        let mut rng = SimRng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Generator positioned at a previously captured word counter.
    pub fn rng_at(&self, word_pos: u128) -> SimRng {
        let mut rng = self.rng();
        rng.set_word_pos(word_pos);
        rng
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn base() -> ModelParams<f64> {
        ModelParams {
            hurst: 0.4,
            dim: 2,
            coupling: 0.1,
            horizon: 1.0,
            epsilon: 0.01,
            basis_size: 12,
            grid_size: 128,
            dt: 0.1,
            seed: 42,
        }
    }

    #[test]
    fn dh_below_one_accepted() {
        // 2 * 0.4 = 0.8 < 1
        assert!(base().validate().is_ok());
        // 1 * 0.75 = 0.75 < 1
        let p = ModelParams { hurst: 0.75, dim: 1, ..base() };
        assert!(p.validate().is_ok());
    }

    #[test]
    fn dh_equal_one_rejected() {
        let p = ModelParams { hurst: 0.5, dim: 2, ..base() };
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("dH<1"), "{err}");
    }

    #[test]
    fn validate_is_idempotent() {
        let once = base().validate().unwrap();
        let twice = once.clone().validate().unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn rejects_each_bad_field() {
        assert!(ModelParams { hurst: 0.0, ..base() }.validate().is_err());
        assert!(ModelParams { hurst: 1.0, dim: 0, ..base() }.validate().is_err());
        assert!(ModelParams { dim: 0, ..base() }.validate().is_err());
        assert!(ModelParams { coupling: -0.1, ..base() }.validate().is_err());
        assert!(ModelParams { horizon: 0.0, ..base() }.validate().is_err());
        assert!(ModelParams { epsilon: 0.0, ..base() }.validate().is_err());
        assert!(ModelParams { basis_size: 0, ..base() }.validate().is_err());
        assert!(ModelParams { basis_size: 200, ..base() }.validate().is_err());
        assert!(ModelParams { dt: 0.0, ..base() }.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let mut doc: serde_json::Value = serde_json::from_str(&base().to_json()).unwrap();
        doc["bogus"] = 1.0.into();
        let err = ModelParams::<f64>::from_json(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn config_json_round_trips() {
        let p = base();
        let q = ModelParams::<f64>::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.config_hash(), q.config_hash());
    }

    #[test]
    fn equal_streams_replay_distinct_streams_differ() {
        let s = RngStream::new(7, 3);
        let a: Vec<u64> = {
            let mut r = s.rng();
            (0..32).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = s.rng();
            (0..32).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let mut other = RngStream::new(7, 4).rng();
        let c: Vec<u64> = (0..32).map(|_| other.next_u64()).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn word_pos_restores_mid_stream() {
        let s = RngStream::new(11, 0);
        let mut r = s.rng();
        let _ = r.next_u64();
        let pos = r.get_word_pos();
        let rest: Vec<u64> = (0..16).map(|_| r.next_u64()).collect();
        let mut resumed = s.rng_at(pos);
        let replay: Vec<u64> = (0..16).map(|_| resumed.next_u64()).collect();
        assert_eq!(rest, replay);
    }

    #[test]
    fn uniform_grid_ends_at_horizon() {
        let g = base().uniform_grid();
        assert_eq!(g.len(), 128);
        assert!(g[0] > 0.0);
        assert!((g[127] - 1.0).abs() < 1e-15);
    }
}
