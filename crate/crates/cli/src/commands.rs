//! Command implementations: chain execution with checkpointing, oracle
//! ensembles, the verification suite, and path export. All artifacts are
//! deterministic functions of `(config, seed)`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use edwards::chain::{ChainRecord, ChainRunner, ChainSettings, Checkpoint};
use edwards::diagnostics::{
    self, continuity_defect, cross_variation, fukushima_qv, ibp_residual, DiagnosticReport,
    DriftSign, ReferenceDistribution,
};
use edwards::error::{Error, Result};
use edwards::field::{polymer_path, write_path_csv};
use edwards::kernel::GramBasis;
use edwards::model::ModelParams;
use edwards::observables::{Constant, Coordinate};
use edwards::oracle::{build_ensemble, summarize, OracleSummary};
use edwards::stats;
use edwards::Real;

use crate::config::RunConfig;

/// Minimum effective sample size the verifier demands of an oracle
/// ensemble before any comparison is attempted.
pub const MIN_ORACLE_ESS: f64 = 1000.0;

/// Minimum effective sample size of a chain series for the chain-vs-oracle
/// agreement test; below this the autocorrelation-based error bar is not
/// trustworthy.
pub const MIN_CHAIN_ESS: f64 = 50.0;

/// Fraction of the chain discarded as burn-in by the verifier.
pub const BURN_IN_FRACTION: f64 = 0.1;

pub const MANIFEST_FORMAT: &str = "manifest/1";

/// Run-level metadata written next to every artifact set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub params_hash: String,
    pub config: RunConfig,
}

impl Manifest {
    fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            params_hash: config.params()?.config_hash(),
            config: config.clone(),
        })
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn settings_from_config(config: &RunConfig) -> Result<ChainSettings<f64>> {
    let params = config.params()?;
    let mut settings = ChainSettings::new(&params, config.scheme()?)?;
    settings.steps = config.steps;
    settings.thin = config.thin.max(1);
    settings.observables = config.builtins()?;
    Ok(settings)
}

fn observables_csv(record: &ChainRecord<f64>) -> String {
    let mut header = String::from("step,t");
    for (name, _) in &record.observables {
        header.push(',');
        header.push_str(name);
    }
    for &(c, k) in &record.tracked {
        header.push_str(&format!(",x_{c}_{k}"));
    }
    for &(c, k) in &record.tracked {
        header.push_str(&format!(",b_{c}_{k}"));
    }
    let mut out = header;
    out.push('\n');
    let rows = record.steps as usize + 1;
    for j in 0..rows {
        out.push_str(&format!("{j},{:.16e}", record.dt * j as f64));
        for (_, series) in &record.observables {
            out.push_str(&format!(",{:.16e}", series[j]));
        }
        for series in &record.coord_series {
            out.push_str(&format!(",{:.16e}", series[j]));
        }
        for series in &record.drift_series {
            out.push_str(&format!(",{:.16e}", series[j]));
        }
        out.push('\n');
    }
    out
}

fn chain_paths(out: &Path, index: u64) -> (PathBuf, PathBuf, PathBuf) {
    (
        out.join(format!("chain_{index:03}.json")),
        out.join(format!("chain_{index:03}_observables.csv")),
        out.join(format!("chain_{index:03}_checkpoint.json")),
    )
}

fn write_chain_artifacts(out: &Path, index: u64, record: &ChainRecord<f64>) -> Result<()> {
    let (record_path, csv_path, _) = chain_paths(out, index);
    write_json(&record_path, record)?;
    std::fs::write(&csv_path, observables_csv(record))?;
    Ok(())
}

/// Runs the configured stepper for the configured number of steps, thinning
/// and checkpointing at the configured intervals; writes one record + CSV
/// pair per chain plus a manifest.
pub fn cmd_quantize(
    config_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    chains_override: Option<usize>,
    quiet: bool,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let params = config.params()?;
    let gb = GramBasis::from_params(&params)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("quantize_manifest.json"), &Manifest::new("quantize", &config)?)?;

    if let Some(checkpoint_path) = resume {
        let checkpoint: Checkpoint<f64> = read_json(checkpoint_path)?;
        let stream_id = checkpoint.stream_id;
        let settings = settings_from_config(&config)?;
        let mut runner = ChainRunner::resume(checkpoint, &params, &gb, settings)?;
        let record = run_with_checkpoints(&mut runner, &config, out, stream_id)?;
        write_chain_artifacts(out, stream_id, &record)?;
        if !quiet {
            println!(
                "resumed chain {stream_id}: {} steps, max |x|^2/dN = {:.3}",
                record.steps, record.max_mean_square
            );
        }
        return Ok(());
    }

    let n_chains = chains_override.unwrap_or(config.n_chains).max(1);
    let write_lock = Mutex::new(());
    let records: Vec<Result<ChainRecord<f64>>> = (0..n_chains as u64)
        .into_par_iter()
        .map(|chain_idx| {
            let settings = settings_from_config(&config)?;
            let mut runner =
                ChainRunner::new(&params, &gb, settings, params.chain_stream(chain_idx))?;
            run_with_checkpoints_locked(&mut runner, &config, out, chain_idx, &write_lock)
        })
        .collect();
    for (chain_idx, record) in records.into_iter().enumerate() {
        let record = record?;
        write_chain_artifacts(out, chain_idx as u64, &record)?;
        if !quiet {
            let acc = record
                .acceptance_rate
                .map(|r| format!(", acceptance {r:.3}"))
                .unwrap_or_default();
            println!(
                "chain {chain_idx}: {} steps, max |x|^2/dN = {:.3}{acc}",
                record.steps, record.max_mean_square
            );
        }
    }
    Ok(())
}

fn run_with_checkpoints(
    runner: &mut ChainRunner<'_, f64>,
    config: &RunConfig,
    out: &Path,
    chain_idx: u64,
) -> Result<ChainRecord<f64>> {
    let lock = Mutex::new(());
    run_with_checkpoints_locked(runner, config, out, chain_idx, &lock)
}

fn run_with_checkpoints_locked(
    runner: &mut ChainRunner<'_, f64>,
    config: &RunConfig,
    out: &Path,
    chain_idx: u64,
    write_lock: &Mutex<()>,
) -> Result<ChainRecord<f64>> {
    let every = config.checkpoint_every;
    while runner.step_index() < config.steps {
        runner.step()?;
        if every > 0 && runner.step_index().is_multiple_of(every) {
            let ckpt = runner.checkpoint();
            let _guard = write_lock.lock().expect("checkpoint write lock");
            let (_, _, ckpt_path) = chain_paths(out, chain_idx);
            write_json(&ckpt_path, &ckpt)?;
        }
    }
    Ok(runner.checkpoint().record)
}

/// Builds the importance ensemble (`steps` draws) and writes the summary
/// over the configured observables.
pub fn cmd_oracle(config_path: &Path, out: &Path, quiet: bool) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let params = config.params()?;
    let gb = GramBasis::from_params(&params)?;
    std::fs::create_dir_all(out)?;
    let count = config.steps as usize;
    let ens = build_ensemble(&params, &gb, count, params.oracle_stream(0))?;
    let builtins = config.builtins()?;
    let obs: Vec<&dyn edwards::observables::Observable<f64>> = builtins
        .iter()
        .map(|b| b as &dyn edwards::observables::Observable<f64>)
        .collect();
    let summary = summarize(&ens, &gb, &params, &obs)?;
    write_json(&out.join("oracle.json"), &summary)?;
    write_json(&out.join("oracle_manifest.json"), &Manifest::new("oracle", &config)?)?;
    if !quiet {
        println!("oracle: {} draws, ess {:.1}", summary.count, summary.ess);
        for o in &summary.observables {
            match o.std_error {
                Some(se) => println!("  {} = {:.6} +- {:.2e}", o.name, o.estimate, se),
                None => println!("  {} = {:.6} (degenerate, no error bar)", o.name, o.estimate),
            }
        }
    }
    Ok(())
}

fn params_compatible(a: &ModelParams<f64>, b: &ModelParams<f64>) -> bool {
    a.hurst == b.hurst
        && a.dim == b.dim
        && a.coupling == b.coupling
        && a.basis_size == b.basis_size
        && a.grid_size == b.grid_size
        && a.epsilon == b.epsilon
}

fn skipped(name: &str, why: &str) -> DiagnosticReport {
    DiagnosticReport {
        name: name.into(),
        statistic: 0.0,
        threshold: 0.0,
        passed: true,
        details: format!("skipped: {why}"),
    }
}

/// Runs the full diagnostic suite against a recorded chain and an oracle
/// summary. Returns the reports; the caller maps "any failed" to the exit
/// code.
pub fn cmd_verify(
    chain_path: &Path,
    oracle_path: &Path,
    out: &Path,
    sign: DriftSign,
    quiet: bool,
) -> Result<Vec<DiagnosticReport>> {
    let record: ChainRecord<f64> = read_json(chain_path)?;
    let summary: OracleSummary<f64> = read_json(oracle_path)?;
    let oracle_manifest: Manifest = read_json(
        &oracle_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("oracle_manifest.json"),
    )?;
    let oracle_params = oracle_manifest.config.params()?;
    let params = record.params.clone().validate()?;
    if !params_compatible(&params, &oracle_params) {
        return Err(Error::IncompatibleConfigs(
            "chain and oracle disagree on (H, d, g, N, M, epsilon)".into(),
        ));
    }
    if summary.ess.as_f64() <= MIN_ORACLE_ESS {
        return Err(Error::DegenerateWeights(format!(
            "oracle ess {:.1} below the comparison threshold {MIN_ORACLE_ESS}",
            summary.ess
        )));
    }

    std::fs::create_dir_all(out)?;
    let gb = GramBasis::from_params(&params)?;
    let mut reports = Vec::new();

    // boundedness of the recorded run
    reports.push(DiagnosticReport {
        name: "conservativeness".into(),
        statistic: record.max_mean_square,
        threshold: 10.0,
        passed: record.max_mean_square.is_finite() && record.max_mean_square <= 10.0,
        details: "max |coeffs|^2/(dN) over the run".into(),
    });

    // ergodic averages against the oracle estimates; a chain whose series
    // carry fewer than ~50 effective samples cannot estimate its own error
    // bar, so the comparison is skipped rather than coin-flipped
    let burn = ((record.steps as f64) * BURN_IN_FRACTION).round() as usize;
    for (name, series) in &record.observables {
        let Some(est) = summary.estimate(name) else { continue };
        let Some(oracle_se) = est.std_error else { continue };
        let tail = stats::to_f64(&series[burn.min(series.len().saturating_sub(2))..]);
        let ess = stats::effective_sample_size(&tail);
        if ess < MIN_CHAIN_ESS {
            reports.push(skipped(
                &format!("chain_vs_oracle_{name}"),
                &format!("chain effective sample size {ess:.0} below {MIN_CHAIN_ESS}"),
            ));
            continue;
        }
        let (chain_mu, chain_se) = diagnostics::ergodic_average_series(series, burn)?;
        reports.push(diagnostics::agreement_report(
            name,
            (chain_mu, chain_se),
            (est.estimate.as_f64(), oracle_se.as_f64()),
        ));
    }

    // integration by parts on the deterministically rebuilt ensemble
    let count = oracle_manifest.config.steps as usize;
    let ens = build_ensemble(&oracle_params, &gb, count, oracle_params.oracle_stream(0))?;
    reports.push(DiagnosticReport {
        name: "oracle_reproducibility".into(),
        statistic: (ens.ess - summary.ess).abs(),
        threshold: 0.0,
        passed: ens.ess == summary.ess,
        details: "rebuilt ensemble ess must match the summary exactly".into(),
    });
    reports.push(ibp_residual(&ens, &gb, &params, (0, 0), &Constant(1.0), sign)?);
    for &(c, k) in record.tracked.iter().take(2) {
        let u = Coordinate { component: c, index: k };
        reports.push(ibp_residual(&ens, &gb, &params, (c, k), &u, sign)?);
    }

    // martingale structure, when the chain spans enough compute time
    let span = record.compute_span();
    if span >= 50.0 {
        if let Some(&dir) = record.tracked.first() {
            reports.push(fukushima_qv(&record, dir, 50.0)?);
        }
        if record.tracked.len() >= 2 {
            reports.push(cross_variation(&record, record.tracked[0], record.tracked[1], 50.0)?);
        }
    } else {
        reports.push(skipped(
            "fukushima_qv",
            &format!("chain spans t = {span} < 50"),
        ));
    }

    // stationarity of coordinate marginals (free case only; interacting
    // marginals are not standard normal)
    if params.coupling == 0.0 {
        for (slot, &(c, k)) in record.tracked.iter().enumerate() {
            let xs = stats::to_f64(&record.coord_series[slot][burn..]);
            let thinned = stats::thin_by_iact(&xs);
            if thinned.len() < 100 {
                reports.push(skipped(
                    &format!("ks_coord_{c}_{k}"),
                    "fewer than 100 thinned samples",
                ));
                continue;
            }
            let mut report =
                diagnostics::ks_test(&thinned, &ReferenceDistribution::StandardNormal)?;
            report.name = format!("ks_coord_{c}_{k}");
            reports.push(report);
        }
    } else {
        reports.push(skipped("ks_marginals", "marginals are only Gaussian at g = 0"));
    }

    // continuity of the integrated configuration under grid refinement
    reports.push(continuity_trend_report(&record, &params)?);

    write_json(&out.join("report.json"), &reports)?;
    write_json(&out.join("verify_manifest.json"), &VerifyManifest {
        format: MANIFEST_FORMAT.into(),
        command: "verify".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        chain_params_hash: params.config_hash(),
        chain_seed: params.seed,
        oracle_params_hash: oracle_params.config_hash(),
        oracle_seed: oracle_params.seed,
    })?;
    if !quiet {
        for r in &reports {
            println!("{}", r.line());
        }
        let fails = reports.iter().filter(|r| !r.passed).count();
        println!(
            "verify: {}/{} diagnostics passed",
            reports.len() - fails,
            reports.len()
        );
    }
    Ok(reports)
}

#[derive(Serialize, Deserialize)]
struct VerifyManifest {
    format: String,
    command: String,
    version: String,
    chain_params_hash: String,
    chain_seed: u64,
    oracle_params_hash: String,
    oracle_seed: u64,
}

fn continuity_trend_report(
    record: &ChainRecord<f64>,
    params: &ModelParams<f64>,
) -> Result<DiagnosticReport> {
    let m = params.grid_size;
    let n = params.basis_size;
    if !m.is_multiple_of(4) || m / 4 < n {
        return Ok(skipped(
            "continuity_refinement",
            "grid not divisible by 4 or too coarse for the truncation",
        ));
    }
    if record.snapshots.is_empty() {
        return Ok(skipped("continuity_refinement", "no snapshots recorded"));
    }
    let sizes = [m / 4, m / 2, m, 2 * m];
    let bases: Vec<GramBasis<f64>> = sizes
        .iter()
        .map(|&mm| {
            let grid: Vec<f64> = (1..=mm)
                .map(|i| params.horizon * i as f64 / mm as f64)
                .collect();
            GramBasis::build(params.hurst, grid, n)
        })
        .collect::<Result<_>>()?;
    let take = record.snapshots.len().min(4);
    let mut defects = [0.0f64; 3];
    for snap in record.snapshots.iter().rev().take(take) {
        let state = snap.to_state(params.dim, n)?;
        for lvl in 0..3 {
            defects[lvl] += continuity_defect(&state, &bases[lvl], &bases[lvl + 1])?;
        }
    }
    let monotone = defects[0] > defects[1] && defects[1] > defects[2];
    Ok(DiagnosticReport {
        name: "continuity_refinement".into(),
        statistic: defects[2] / defects[0].max(f64::MIN_POSITIVE),
        threshold: 1.0,
        passed: monotone,
        details: format!(
            "defect per dyadic refinement {:.3e} -> {:.3e} -> {:.3e}; pass iff strictly decreasing",
            defects[0], defects[1], defects[2]
        ),
    })
}

/// Exports polymer paths for selected snapshots as CSV, one file per
/// snapshot.
pub fn cmd_paths(chain_path: &Path, out: &Path, snapshots: Option<Vec<usize>>) -> Result<()> {
    let record: ChainRecord<f64> = read_json(chain_path)?;
    let params = record.params.clone().validate()?;
    let gb = GramBasis::from_params(&params)?;
    std::fs::create_dir_all(out)?;
    let available = record.snapshots.len();
    let selected: Vec<usize> = match snapshots {
        Some(list) => {
            for &idx in &list {
                if idx >= available {
                    return Err(Error::Index(format!(
                        "snapshot {idx} requested but the record holds indices 0..{}",
                        available.saturating_sub(1)
                    )));
                }
            }
            list
        }
        None => (0..available).collect(),
    };
    for idx in selected {
        let snap = &record.snapshots[idx];
        let state = snap.to_state(params.dim, params.basis_size)?;
        let path = polymer_path(&state, &gb)?;
        let file = std::fs::File::create(out.join(format!("path_step_{:08}.csv", snap.step)))?;
        let mut writer = std::io::BufWriter::new(file);
        write_path_csv(&path, gb.grid(), &mut writer)?;
        writer.flush()?;
    }
    Ok(())
}

/// Exit-code policy: 0 all pass, 1 diagnostic failure, 2 usage/config
/// error.
pub fn exit_code_for(reports: &[DiagnosticReport]) -> i32 {
    if reports.iter().all(|r| r.passed) {
        0
    } else {
        1
    }
}
