//! Flat run configuration: the model parameters plus the run keys, with
//! unknown keys rejected. Wire names are `H, d, g, T, epsilon, N, M, dt,
//! seed, scheme, steps, thin, checkpoint_every, n_chains, observables`.

use edwards::dynamics::Scheme;
use edwards::error::{Error, Result};
use edwards::model::ModelParams;
use edwards::observables::Builtin;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "H")]
    pub hurst: f64,
    #[serde(rename = "d")]
    pub dim: usize,
    #[serde(rename = "g")]
    pub coupling: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub basis_size: usize,
    #[serde(rename = "M")]
    pub grid_size: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Chain steps for `quantize`; `oracle` reads this as the draw count.
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    /// Checkpoint stride in steps; 0 disables checkpointing.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
}

fn default_scheme() -> String {
    "mala".into()
}

fn default_steps() -> u64 {
    1000
}

fn default_thin() -> u64 {
    100
}

fn default_chains() -> usize {
    1
}

fn default_observables() -> Vec<String> {
    vec!["f1".into(), "f2".into(), "f3".into()]
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.scheme()?;
        self.builtins()?;
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be >= 1".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams<f64>> {
        ModelParams {
            hurst: self.hurst,
            dim: self.dim,
            coupling: self.coupling,
            horizon: self.horizon,
            epsilon: self.epsilon,
            basis_size: self.basis_size,
            grid_size: self.grid_size,
            dt: self.dt,
            seed: self.seed,
        }
        .validate()
    }

    pub fn scheme(&self) -> Result<Scheme> {
        self.scheme.parse()
    }

    pub fn builtins(&self) -> Result<Vec<Builtin>> {
        self.observables.iter().map(|s| Builtin::parse(s)).collect()
    }
}
