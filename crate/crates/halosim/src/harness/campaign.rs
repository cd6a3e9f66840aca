//! Campaign drivers: seeded Monte-Carlo experiments over the closed loop,
//! executed on a worker pool with deterministic, run-indexed reduction.

use super::closedloop::{ClosedLoop, LoopMode, RunOutput};
use super::config::Config;
use super::report::{aggregate_report, MonteCarloReport, RecordRow};
use super::rng::{RandomStream, Subsystem};
use super::HarnessError;
use crate::dynamics::{DynamicsModel, SrpConfig};
use crate::ephem::{AnalyticParams, EphemerisProvider};
use crate::opnav::BodyShape;
use crate::reference::{build_reference, ReferenceOrbit};
use rayon::prelude::*;
use std::path::Path;
use std::sync::Arc;

/// Construct (or load) the baseline reference for a campaign.
pub fn campaign_reference(config: &Config) -> Result<ReferenceOrbit, HarnessError> {
    if let Some(csv) = &config.reference.load_csv {
        let json = csv.with_extension("json");
        return Ok(ReferenceOrbit::load(csv, &json)?);
    }
    let needed = config.campaign.revolutions + config.controller.n_perilune + 3;
    let revolutions = config.reference.revolutions.max(needed);
    let circular = Arc::new(EphemerisProvider::circular(AnalyticParams {
        em_ecc: 0.0,
        ..config.truth_ephemeris()
    }));
    let model = DynamicsModel::reference(circular);
    Ok(build_reference(
        &model,
        &config.dynamics.integrator,
        revolutions,
    )?)
}

/// Truth-model SRP parameters with this run's sampled uncertainty.
fn sampled_srp(config: &Config, run: usize, streams: &RandomStream) -> SrpConfig {
    use rand_distr::{Distribution, Normal};
    let mut rng = streams.substream(run, Subsystem::SrpParams);
    let nominal = config.dynamics.srp;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let d_am = unit.sample(&mut rng) * config.errors.srp_area_mass_rel_3sigma / 3.0;
    let d_cr = unit.sample(&mut rng) * config.errors.srp_cr_rel_3sigma / 3.0;
    SrpConfig {
        pressure_kn_km2: nominal.pressure_kn_km2,
        cr: (nominal.cr * (1.0 + d_cr)).max(0.01 * nominal.cr),
        area_mass_m2_kg: (nominal.area_mass_m2_kg * (1.0 + d_am)).max(0.01 * nominal.area_mass_m2_kg),
    }
}

/// The balancing solve is pure and fairly expensive, so completed starts are
/// memoized per (model, span) within the process.
fn balanced_truth_start(
    config: &Config,
    reference: &ReferenceOrbit,
    truth_provider: &Arc<EphemerisProvider>,
) -> Result<crate::dynamics::StateVector, HarnessError> {
    use std::collections::HashMap;
    use std::sync::Mutex;
    static CACHE: Mutex<Option<HashMap<String, crate::dynamics::StateVector>>> = Mutex::new(None);

    let revolutions = config.campaign.revolutions + 2;
    let key = format!(
        "{};revs={revolutions};srp={:?};t0={}",
        truth_provider.descriptor(),
        config.dynamics.srp,
        reference.start_epoch()
    );
    if let Some(hit) = CACHE
        .lock()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .get(&key)
    {
        return Ok(*hit);
    }
    let nominal = DynamicsModel::truth(truth_provider.clone(), config.dynamics.srp);
    let state = crate::reference::balance_in_model(
        reference,
        &nominal,
        &config.dynamics.integrator,
        revolutions,
    )?;
    CACHE
        .lock()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert(key, state);
    Ok(state)
}

fn run_campaign(
    config: &Config,
    mode: LoopMode,
    kind: &str,
    reference: &ReferenceOrbit,
) -> Result<(MonteCarloReport, Vec<Vec<RecordRow>>), HarnessError> {
    let streams = RandomStream::new(config.campaign.seed);
    let truth_provider = Arc::new(EphemerisProvider::enriched(config.truth_ephemeris()));
    let camera = config.camera_model();
    let shape = BodyShape::moon();

    // without a controller the truth must itself be balanced in the truth
    // model, or the unstable mode amplifies the model mismatch off the orbit
    // within a handful of revolutions
    let truth_start = if mode == LoopMode::FilterOnly {
        Some(balanced_truth_start(config, reference, &truth_provider)?)
    } else {
        None
    };

    let outputs: Vec<RunOutput> = (0..config.campaign.runs)
        .into_par_iter()
        .map(|run_idx| {
            let truth_model =
                DynamicsModel::truth(truth_provider.clone(), sampled_srp(config, run_idx, &streams));
            let nominal_model =
                DynamicsModel::truth(truth_provider.clone(), config.dynamics.srp);
            let closed_loop = ClosedLoop {
                config,
                mode,
                reference,
                truth_model,
                nominal_model,
                camera,
                shape,
                controller: config.controller,
                truth_start,
            };
            closed_loop.run(run_idx, &streams)
        })
        .collect();

    let runs: Vec<_> = outputs.iter().map(|o| o.report.clone()).collect();
    let aggregate = aggregate_report(&runs);
    let sigma_vz_profile = if mode == LoopMode::ControlOnly {
        None
    } else {
        Some(sigma_profile(&outputs))
    };
    let series: Vec<Vec<RecordRow>> = outputs.into_iter().map(|o| o.rows).collect();
    Ok((
        MonteCarloReport {
            kind: kind.to_string(),
            seed: config.campaign.seed,
            runs,
            aggregate,
            sigma_vz_profile,
        },
        series,
    ))
}

/// Mean sigma_vz per true-anomaly bucket across all runs and revolutions.
fn sigma_profile(outputs: &[RunOutput]) -> Vec<(f64, f64)> {
    let mut buckets: Vec<(f64, f64, usize)> = Vec::new();
    for out in outputs {
        for &(ta, sig) in &out.sigma_vz_samples {
            match buckets
                .iter_mut()
                .find(|(bta, _, _)| (*bta - ta).abs() < 1e-9)
            {
                Some((_, sum, count)) => {
                    *sum += sig;
                    *count += 1;
                }
                None => buckets.push((ta, sig, 1)),
            }
        }
    }
    buckets.sort_by(|a, b| a.0.total_cmp(&b.0));
    buckets
        .into_iter()
        .map(|(ta, sum, count)| (ta, sum / count as f64))
        .collect()
}

fn finish(
    config: &Config,
    result: (MonteCarloReport, Vec<Vec<RecordRow>>),
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let (report, series) = result;
    if let Some(dir) = out_dir {
        super::report::write_campaign(&report, &series, dir)?;
        let cfg_json =
            serde_json::to_string_pretty(config).map_err(|e| HarnessError::BadConfig(e.to_string()))?;
        std::fs::write(dir.join("config.json"), cfg_json + "\n")?;
    }
    Ok(report)
}

/// Filter-only experiment: measurements and filtering, no control.
pub fn run_filter_experiment(
    config: &Config,
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let reference = campaign_reference(config)?;
    let result = run_campaign(config, LoopMode::FilterOnly, "filter", &reference)?;
    finish(config, result, out_dir)
}

/// Control-only experiment: the estimate is the truth corrupted by sampled
/// orbit-determination error at each control point.
pub fn run_control_experiment(
    config: &Config,
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let reference = campaign_reference(config)?;
    let result = run_campaign(config, LoopMode::ControlOnly, "control", &reference)?;
    finish(config, result, out_dir)
}

/// Full pipeline: measurements feed the filter; the controller consumes the
/// filter state only.
pub fn run_full_pipeline(
    config: &Config,
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let reference = campaign_reference(config)?;
    let result = run_campaign(config, LoopMode::Full, "pipeline", &reference)?;
    finish(config, result, out_dir)
}

/// Variants that reuse an already-built reference (for sweeps).
pub fn run_control_experiment_with_reference(
    config: &Config,
    reference: &ReferenceOrbit,
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let result = run_campaign(config, LoopMode::ControlOnly, "control", reference)?;
    finish(config, result, out_dir)
}

pub fn run_full_pipeline_with_reference(
    config: &Config,
    reference: &ReferenceOrbit,
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let result = run_campaign(config, LoopMode::Full, "pipeline", reference)?;
    finish(config, result, out_dir)
}

pub fn run_filter_experiment_with_reference(
    config: &Config,
    reference: &ReferenceOrbit,
    out_dir: Option<&Path>,
) -> Result<MonteCarloReport, HarnessError> {
    let result = run_campaign(config, LoopMode::FilterOnly, "filter", reference)?;
    finish(config, result, out_dir)
}
