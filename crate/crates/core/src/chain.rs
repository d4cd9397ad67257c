//! Chain execution and recording: runs a configured stepper, records
//! per-step observables and tracked coordinate/drift series (cheap) plus
//! thinned full-state snapshots (bulky), and supports checkpointing with
//! bit-exact resume.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    euler_from, eval_state, mala_move, step_ou_split, Scheme, StateEval, StepperConfig,
};
use crate::error::{Error, Result};
use crate::field::{sample_prior, FieldState};
use crate::kernel::GramBasis;
use crate::localtime::local_time_of_coeffs;
use crate::model::{ModelParams, RngStream, SimRng};
use crate::observables::{Builtin, Observable};
use crate::real::Real;

/// Everything the runner needs beyond the model parameters.
#[derive(Clone, Debug)]
pub struct ChainSettings<T> {
    pub cfg: StepperConfig<T>,
    pub steps: u64,
    /// Snapshot stride; full states are kept at steps `0, thin, 2 thin, ...`
    /// and at the final step.
    pub thin: u64,
    /// Observable series recorded every step.
    pub observables: Vec<Builtin>,
    /// Coordinate directions `(component, basis index)` whose value and
    /// drift are recorded every step, for the decomposition diagnostics.
    pub tracked: Vec<(usize, usize)>,
}

impl<T: Real> ChainSettings<T> {
    pub fn new(params: &ModelParams<T>, scheme: Scheme) -> Result<Self> {
        Ok(Self {
            cfg: StepperConfig::new(scheme, params.dt, params.coupling)?,
            steps: 0,
            thin: 1,
            observables: Builtin::ALL.to_vec(),
            tracked: vec![(0, 0), (0, 1)],
        })
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_thin(mut self, thin: u64) -> Self {
        self.thin = thin.max(1);
        self
    }
}

/// RNG provenance stored with every record: the stream and the word
/// positions spanned by the run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngProvenance {
    pub seed: u64,
    pub stream_id: u64,
    pub start_word_pos: u128,
    pub end_word_pos: u128,
}

/// Thinned full-state snapshot (coefficients row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T> {
    pub step: u64,
    pub compute_time: T,
    pub coeffs: Vec<T>,
}

impl<T: Real> Snapshot<T> {
    pub fn to_state(&self, dim: usize, basis_len: usize) -> Result<FieldState<T>> {
        if self.coeffs.len() != dim * basis_len {
            return Err(Error::Shape(format!(
                "snapshot holds {} coefficients, expected {}x{}",
                self.coeffs.len(),
                dim,
                basis_len
            )));
        }
        FieldState::new(
            DMatrix::from_fn(dim, basis_len, |i, k| self.coeffs[i * basis_len + k]),
            self.compute_time,
        )
    }
}

/// Recorded trajectory of one chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainRecord<T> {
    pub params: ModelParams<T>,
    pub scheme: Scheme,
    pub dt: T,
    pub steps: u64,
    pub thin: u64,
    pub tracked: Vec<(usize, usize)>,
    /// Per tracked direction: coordinate value at steps `0..=steps`.
    pub coord_series: Vec<Vec<T>>,
    /// Per tracked direction: drift value at steps `0..=steps`.
    pub drift_series: Vec<Vec<T>>,
    /// Named observable series at steps `0..=steps`.
    pub observables: Vec<(String, Vec<T>)>,
    pub snapshots: Vec<Snapshot<T>>,
    /// Accepted fraction; `None` for unadjusted schemes.
    pub acceptance_rate: Option<T>,
    pub rng: RngProvenance,
    /// Running maximum of `|coeffs|^2 / (d N)` over the whole run.
    pub max_mean_square: T,
}

impl<T: Real> ChainRecord<T> {
    pub fn observable_series(&self, name: &str) -> Option<&[T]> {
        self.observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn tracked_index(&self, direction: (usize, usize)) -> Option<usize> {
        self.tracked.iter().position(|&d| d == direction)
    }

    pub fn compute_span(&self) -> T {
        self.dt * T::of(self.steps as f64)
    }
}

/// Resumable checkpoint: configuration hash, position in the run, the RNG
/// word counter, and the record accumulated so far (so a resumed run
/// reproduces the uninterrupted artifacts byte for byte).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub params_hash: String,
    pub scheme: Scheme,
    pub step: u64,
    pub compute_time: T,
    pub coeffs: Vec<T>,
    pub seed: u64,
    pub stream_id: u64,
    pub word_pos: u128,
    pub record: ChainRecord<T>,
}

pub const CHECKPOINT_FORMAT: &str = "checkpoint/1";

/// Incremental chain runner; owns the generator and the cached evaluation
/// of the current state.
pub struct ChainRunner<'a, T: Real> {
    params: ModelParams<T>,
    gb: &'a GramBasis<T>,
    settings: ChainSettings<T>,
    stream: RngStream,
    rng: SimRng,
    step: u64,
    accepts: u64,
    cur: StateEval<T>,
    record: ChainRecord<T>,
}

impl<'a, T: Real> ChainRunner<'a, T> {
    /// Starts a fresh chain from a prior draw (the stream's first use).
    pub fn new(
        params: &ModelParams<T>,
        gb: &'a GramBasis<T>,
        settings: ChainSettings<T>,
        stream: RngStream,
    ) -> Result<Self> {
        check_shapes(params, gb)?;
        let mut rng = stream.rng();
        let start_pos = rng.get_word_pos();
        let init = sample_prior(gb, params.dim, &mut rng);
        Self::with_initial(params, gb, settings, stream, rng, start_pos, init)
    }

    /// Starts from an explicit initial state (stream positioned at 0).
    pub fn from_state(
        params: &ModelParams<T>,
        gb: &'a GramBasis<T>,
        settings: ChainSettings<T>,
        stream: RngStream,
        init: FieldState<T>,
    ) -> Result<Self> {
        check_shapes(params, gb)?;
        let rng = stream.rng();
        let pos = rng.get_word_pos();
        Self::with_initial(params, gb, settings, stream, rng, pos, init)
    }

    fn with_initial(
        params: &ModelParams<T>,
        gb: &'a GramBasis<T>,
        settings: ChainSettings<T>,
        stream: RngStream,
        rng: SimRng,
        start_pos: u128,
        init: FieldState<T>,
    ) -> Result<Self> {
        for &(c, k) in &settings.tracked {
            if c >= params.dim || k >= params.basis_size {
                return Err(Error::Index(format!(
                    "tracked direction ({c},{k}) out of range for d={}, N={}",
                    params.dim, params.basis_size
                )));
            }
        }
        let cur = eval_state(init, gb, params.epsilon, settings.cfg.g)?;
        let record = ChainRecord {
            params: params.clone(),
            scheme: settings.cfg.scheme,
            dt: settings.cfg.dt,
            steps: 0,
            thin: settings.thin,
            tracked: settings.tracked.clone(),
            coord_series: vec![Vec::new(); settings.tracked.len()],
            drift_series: vec![Vec::new(); settings.tracked.len()],
            observables: settings
                .observables
                .iter()
                .map(|b| (Observable::<T>::name(b), Vec::new()))
                .collect(),
            snapshots: Vec::new(),
            acceptance_rate: None,
            rng: RngProvenance {
                seed: stream.seed,
                stream_id: stream.stream_id,
                start_word_pos: start_pos,
                end_word_pos: start_pos,
            },
            max_mean_square: T::zero(),
        };
        let mut runner = Self {
            params: params.clone(),
            gb,
            settings,
            stream,
            rng,
            step: 0,
            accepts: 0,
            cur,
            record,
        };
        runner.record_current()?;
        Ok(runner)
    }

    /// Restores a runner from a checkpoint; the configuration hash must
    /// match the parameters that created it.
    pub fn resume(
        checkpoint: Checkpoint<T>,
        params: &ModelParams<T>,
        gb: &'a GramBasis<T>,
        settings: ChainSettings<T>,
    ) -> Result<Self> {
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported checkpoint format {:?}",
                checkpoint.format
            )));
        }
        if checkpoint.params_hash != params.config_hash() {
            return Err(Error::CheckpointMismatch(
                "checkpoint was written by a different configuration".into(),
            ));
        }
        if checkpoint.scheme != settings.cfg.scheme {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint scheme {} does not match requested {}",
                checkpoint.scheme.name(),
                settings.cfg.scheme.name()
            )));
        }
        check_shapes(params, gb)?;
        let stream = RngStream::new(checkpoint.seed, checkpoint.stream_id);
        let rng = stream.rng_at(checkpoint.word_pos);
        let state = FieldState::new(
            DMatrix::from_fn(params.dim, params.basis_size, |i, k| {
                checkpoint.coeffs[i * params.basis_size + k]
            }),
            checkpoint.compute_time,
        )?;
        let cur = eval_state(state, gb, params.epsilon, settings.cfg.g)?;
        let mut accepts = 0u64;
        if let Some(rate) = checkpoint.record.acceptance_rate {
            accepts = (rate * T::of(checkpoint.step as f64)).round().as_f64() as u64;
        }
        Ok(Self {
            params: params.clone(),
            gb,
            settings,
            stream,
            rng,
            step: checkpoint.step,
            accepts,
            cur,
            record: checkpoint.record,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn current_state(&self) -> &FieldState<T> {
        &self.cur.state
    }

    /// Advances one step, recording series for the new state.
    pub fn step(&mut self) -> Result<()> {
        let cfg = self.settings.cfg;
        match cfg.scheme {
            Scheme::EulerMaruyama => {
                let next = euler_from(&self.cur, cfg.dt, &mut self.rng);
                self.cur = eval_state(next, self.gb, self.params.epsilon, cfg.g)?;
            }
            Scheme::OuSplitting => {
                let next = step_ou_split(
                    &self.cur.state,
                    self.gb,
                    &self.params,
                    &cfg,
                    &mut self.rng,
                )?;
                self.cur = eval_state(next, self.gb, self.params.epsilon, cfg.g)?;
            }
            Scheme::Mala => {
                let (next, accepted, _) =
                    mala_move(&self.cur, self.gb, self.params.epsilon, &cfg, &mut self.rng)?;
                self.cur = next;
                if accepted {
                    self.accepts += 1;
                }
            }
        }
        self.step += 1;
        self.record_current()?;
        Ok(())
    }

    fn record_current(&mut self) -> Result<()> {
        let state = &self.cur.state;
        if state.coeffs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "chain diverged: non-finite coefficient at step {}",
                self.step
            )));
        }
        for (slot, &(c, k)) in self.settings.tracked.iter().enumerate() {
            self.record.coord_series[slot].push(state.coeffs[(c, k)]);
            self.record.drift_series[slot].push(self.cur.drift.drift[(c, k)]);
        }
        for (slot, builtin) in self.settings.observables.iter().enumerate() {
            let value = match builtin {
                // reuse the cached local time when the drift computed it
                Builtin::LocalTime => match self.cur.drift.local_time {
                    Some(v) => v,
                    None => local_time_of_coeffs(&state.coeffs, self.gb, self.params.epsilon)?,
                },
                other => other.eval(state, self.gb, self.params.epsilon)?,
            };
            self.record.observables[slot].1.push(value);
        }
        let ms = state.mean_square();
        if ms > self.record.max_mean_square {
            self.record.max_mean_square = ms;
        }
        // snapshots at multiples of the stride only, so a record is always a
        // prefix of any longer record with the same settings (checkpoint
        // equivalence depends on this)
        if self.step.is_multiple_of(self.settings.thin) {
            let mut coeffs = Vec::with_capacity(state.dim() * state.basis_len());
            for i in 0..state.dim() {
                for k in 0..state.basis_len() {
                    coeffs.push(state.coeffs[(i, k)]);
                }
            }
            self.record.snapshots.push(Snapshot {
                step: self.step,
                compute_time: state.compute_time,
                coeffs,
            });
        }
        self.record.steps = self.step;
        self.record.rng.end_word_pos = self.rng.get_word_pos();
        if self.settings.cfg.scheme == Scheme::Mala && self.step > 0 {
            self.record.acceptance_rate =
                Some(T::of(self.accepts as f64) / T::of(self.step as f64));
        }
        Ok(())
    }

    /// Checkpoint after the step just completed.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let state = &self.cur.state;
        let mut coeffs = Vec::with_capacity(state.dim() * state.basis_len());
        for i in 0..state.dim() {
            for k in 0..state.basis_len() {
                coeffs.push(state.coeffs[(i, k)]);
            }
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            params_hash: self.params.config_hash(),
            scheme: self.settings.cfg.scheme,
            step: self.step,
            compute_time: state.compute_time,
            coeffs,
            seed: self.stream.seed,
            stream_id: self.stream.stream_id,
            word_pos: self.rng.get_word_pos(),
            record: self.record.clone(),
        }
    }

    pub fn finish(self) -> ChainRecord<T> {
        self.record
    }

    /// Runs to the configured step count.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step < self.settings.steps {
            self.step()?;
        }
        Ok(())
    }
}

fn check_shapes<T: Real>(params: &ModelParams<T>, gb: &GramBasis<T>) -> Result<()> {
    if gb.basis_len() != params.basis_size || gb.grid_len() != params.grid_size {
        return Err(Error::Shape(format!(
            "basis is N={}, M={} but params want N={}, M={}",
            gb.basis_len(),
            gb.grid_len(),
            params.basis_size,
            params.grid_size
        )));
    }
    Ok(())
}

/// One-call chain run with a prior-draw start.
pub fn run_chain<T: Real>(
    params: &ModelParams<T>,
    gb: &GramBasis<T>,
    settings: ChainSettings<T>,
    stream: RngStream,
) -> Result<ChainRecord<T>> {
    let mut runner = ChainRunner::new(params, gb, settings, stream)?;
    runner.run_to_end()?;
    Ok(runner.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams<f64> {
        ModelParams {
            hurst: 0.4,
            dim: 2,
            coupling: 0.1,
            horizon: 1.0,
            epsilon: 0.05,
            basis_size: 5,
            grid_size: 12,
            dt: 0.05,
            seed: 99,
        }
        .validate()
        .unwrap()
    }

    fn settings(p: &ModelParams<f64>, scheme: Scheme, steps: u64) -> ChainSettings<f64> {
        ChainSettings::new(p, scheme).unwrap().with_steps(steps).with_thin(4)
    }

    #[test]
    fn zero_steps_records_only_initial_state() {
        let p = params();
        let gb = GramBasis::from_params(&p).unwrap();
        let rec = run_chain(&p, &gb, settings(&p, Scheme::EulerMaruyama, 0), p.chain_stream(0))
            .unwrap();
        assert_eq!(rec.steps, 0);
        assert_eq!(rec.snapshots.len(), 1);
        assert_eq!(rec.coord_series[0].len(), 1);
        assert_eq!(rec.observable_series("f1").unwrap().len(), 1);
    }

    #[test]
    fn series_lengths_are_consistent() {
        let p = params();
        let gb = GramBasis::from_params(&p).unwrap();
        let rec =
            run_chain(&p, &gb, settings(&p, Scheme::Mala, 10), p.chain_stream(0)).unwrap();
        assert_eq!(rec.coord_series[0].len(), 11);
        assert_eq!(rec.drift_series[0].len(), 11);
        assert_eq!(rec.observable_series("f2").unwrap().len(), 11);
        // snapshots at stride multiples only
        let steps: Vec<u64> = rec.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 4, 8]);
        let rate = rec.acceptance_rate.unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }

    #[test]
    fn identical_streams_give_identical_records() {
        let p = params();
        let gb = GramBasis::from_params(&p).unwrap();
        let a = run_chain(&p, &gb, settings(&p, Scheme::Mala, 20), p.chain_stream(3)).unwrap();
        let b = run_chain(&p, &gb, settings(&p, Scheme::Mala, 20), p.chain_stream(3)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = run_chain(&p, &gb, settings(&p, Scheme::Mala, 20), p.chain_stream(4)).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let p = params();
        let gb = GramBasis::from_params(&p).unwrap();
        for scheme in [Scheme::EulerMaruyama, Scheme::OuSplitting, Scheme::Mala] {
            let full =
                run_chain(&p, &gb, settings(&p, scheme, 16), p.chain_stream(7)).unwrap();

            let mut front = ChainRunner::new(
                &p,
                &gb,
                settings(&p, scheme, 16),
                p.chain_stream(7),
            )
            .unwrap();
            for _ in 0..9 {
                front.step().unwrap();
            }
            let ckpt = front.checkpoint();
            // round-trip the checkpoint through JSON like the CLI does
            let ckpt: Checkpoint<f64> =
                serde_json::from_str(&serde_json::to_string(&ckpt).unwrap()).unwrap();
            let mut back =
                ChainRunner::resume(ckpt, &p, &gb, settings(&p, scheme, 16)).unwrap();
            back.run_to_end().unwrap();
            let resumed = back.finish();
            assert_eq!(
                serde_json::to_string(&full).unwrap(),
                serde_json::to_string(&resumed).unwrap(),
                "resume mismatch for {}",
                scheme.name()
            );
        }
    }

    #[test]
    fn resume_rejects_other_config() {
        let p = params();
        let gb = GramBasis::from_params(&p).unwrap();
        let mut runner =
            ChainRunner::new(&p, &gb, settings(&p, Scheme::Mala, 8), p.chain_stream(0)).unwrap();
        runner.step().unwrap();
        let ckpt = runner.checkpoint();
        let other = ModelParams { coupling: 0.2, ..p.clone() }.validate().unwrap();
        let gb2 = GramBasis::from_params(&other).unwrap();
        match ChainRunner::resume(ckpt, &other, &gb2, settings(&other, Scheme::Mala, 8)) {
            Err(Error::CheckpointMismatch(_)) => {}
            Err(other) => panic!("expected CheckpointMismatch, got {other:?}"),
            Ok(_) => panic!("expected CheckpointMismatch, got Ok"),
        }
    }

    #[test]
    fn tracked_directions_are_validated() {
        let p = params();
        let gb = GramBasis::from_params(&p).unwrap();
        let mut s = settings(&p, Scheme::EulerMaruyama, 1);
        s.tracked = vec![(0, 99)];
        match ChainRunner::new(&p, &gb, s, p.chain_stream(0)) {
            Err(Error::Index(_)) => {}
            Err(other) => panic!("expected IndexError, got {other:?}"),
            Ok(_) => panic!("expected IndexError, got Ok"),
        }
    }
}
