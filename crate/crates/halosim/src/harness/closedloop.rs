//! The per-run closed loop: truth propagation in the enriched model,
//! measurement synthesis and filtering, and trigger/control at the burn
//! true anomaly, all driven by a true-anomaly schedule.
//!
//! The truth trajectory alone decides when schedule items occur (events are
//! located on it); the filter and controller only ever see the estimate.

use super::config::{Config, FilterKind};
use super::report::{FilterRunStats, ManeuverRecord, RecordRow, RowKind, RunReport};
use super::rng::{
    corrupt_maneuver, per_axis_sigma, sample_error_vector, RandomStream, Subsystem,
};
use crate::constants::*;
use crate::control::{plan_maneuver, ControllerConfig};
use crate::dynamics::{DynamicsModel, StateVector};
use crate::epoch::Epoch;
use crate::events::{find_event, EventSpec};
use crate::filters::{
    ekf_predict, measurement_update, rotate_measurement_to_inertial, ukf_predict, FilterState,
};
use crate::frames::{Cam, Inertial, MoonPa, Rot, V3};
use crate::kepler::osculating_true_anomaly;
use crate::opnav::{
    flight_limb_count, measure, sample_attitude_perturbation, BodyShape, CameraModel,
    LimbObservation,
};
use crate::reference::ReferenceOrbit;
use nalgebra::{Matrix6, Vector3};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    FilterOnly,
    ControlOnly,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Perilune,
    Record,
    Measure,
    Control,
}

pub struct RunOutput {
    pub report: RunReport,
    pub rows: Vec<RecordRow>,
    /// (true anomaly, filter sigma_vz km/s) samples from record rows.
    pub sigma_vz_samples: Vec<(f64, f64)>,
}

pub struct ClosedLoop<'a> {
    pub config: &'a Config,
    pub mode: LoopMode,
    pub reference: &'a ReferenceOrbit,
    /// Truth dynamics with this run's sampled SRP parameters.
    pub truth_model: DynamicsModel,
    /// Nominal dynamics used by the filter and the controller.
    pub nominal_model: DynamicsModel,
    pub camera: CameraModel,
    pub shape: BodyShape,
    pub controller: ControllerConfig,
    /// Override for the truth's initial state (a truth-model-balanced
    /// baseline start); defaults to the reference start state.
    pub truth_start: Option<StateVector>,
}

struct LoopState {
    truth: StateVector,
    filter: Option<FilterState>,
    cum_dv_km_s: f64,
    revs_done: usize,
    rows: Vec<RecordRow>,
    maneuvers: Vec<ManeuverRecord>,
    sigma_vz: Vec<(f64, f64)>,
    peri_min: f64,
    peri_max: f64,
    inside_3sigma: usize,
    recorded: usize,
    sum_sq_pos: f64,
    sum_sq_vel: f64,
    meas_ok: usize,
    meas_skipped: usize,
}

impl<'a> ClosedLoop<'a> {
    /// Execute one Monte-Carlo run.
    pub fn run(&self, run_idx: usize, streams: &RandomStream) -> RunOutput {
        let icfg = &self.config.dynamics.integrator;
        let mut init_rng = streams.substream(run_idx, Subsystem::InitState);
        let mut meas_rng = streams.substream(run_idx, Subsystem::Measurement);
        let mut att_rng = streams.substream(run_idx, Subsystem::Attitude);
        let mut od_rng = streams.substream(run_idx, Subsystem::OdNoise);
        let mut exec_rng = streams.substream(run_idx, Subsystem::Execution);

        let t0 = self.reference.start_epoch();
        let ref0 = self
            .reference
            .lookup_state(t0)
            .expect("reference covers its own start");

        // the truth starts on the baseline; the injection error corrupts the
        // initial ESTIMATE (with the matching covariance), so the filter has
        // to pull itself onto the truth
        let errors = &self.config.errors;
        let dr = sample_error_vector(errors.init_pos_3sigma_km, &mut init_rng);
        let dv = sample_error_vector(errors.init_vel_3sigma_cm_s * 1e-5, &mut init_rng);
        let truth = self.truth_start.unwrap_or(ref0);
        let filter = match self.mode {
            LoopMode::ControlOnly => None,
            _ => Some(FilterState::from_sigmas(
                StateVector::new(
                    t0,
                    V3::from_raw(ref0.r.raw() + dr),
                    V3::from_raw(ref0.v.raw() + dv),
                ),
                per_axis_sigma(errors.init_pos_3sigma_km),
                per_axis_sigma(errors.init_vel_3sigma_cm_s * 1e-5),
            )),
        };

        let mut st = LoopState {
            truth,
            filter,
            cum_dv_km_s: 0.0,
            revs_done: 0,
            rows: Vec::new(),
            maneuvers: Vec::new(),
            sigma_vz: Vec::new(),
            peri_min: f64::INFINITY,
            peri_max: 0.0,
            inside_3sigma: 0,
            recorded: 0,
            sum_sq_pos: 0.0,
            sum_sq_vel: 0.0,
            meas_ok: 0,
            meas_skipped: 0,
        };

        let schedule = self.build_schedule();
        let ta_start = osculating_true_anomaly(&st.truth).unwrap_or(180.0);
        let mut idx = schedule
            .iter()
            .position(|(ta, _)| *ta > ta_start + 1e-9)
            .unwrap_or(0);

        let revolutions = self.config.campaign.revolutions;
        let mut failure: Option<String> = None;
        // generous horizon: an uncontrolled trajectory's period inflates as
        // it wanders off the baseline
        let horizon = 3.0 * self.reference.period_s();
        // in filter-only mode the truth never receives maneuvers, so the
        // next perilune can be located ahead of time; true-anomaly searches
        // are then capped to the current revolution, and phases the
        // wandering osculating geometry no longer reaches are skipped
        let mut cached_peri: Option<StateVector> = None;
        'outer: while st.revs_done < revolutions {
            let (ta, actions) = &schedule[idx % schedule.len()];
            idx += 1;
            let is_perilune = actions.contains(&Action::Perilune);
            let located = if self.mode == LoopMode::FilterOnly {
                if cached_peri.is_none() {
                    cached_peri = match find_event(
                        &self.truth_model,
                        icfg,
                        &st.truth,
                        &EventSpec::perilune(1),
                        horizon,
                    ) {
                        Ok((_, state)) => Some(state),
                        Err(e) => {
                            failure = Some(format!("truth perilune search failed: {e}"));
                            break 'outer;
                        }
                    };
                }
                let peri = cached_peri.unwrap();
                if is_perilune {
                    cached_peri = None;
                    Ok(peri)
                } else {
                    let window = peri.epoch - st.truth.epoch;
                    find_event(
                        &self.truth_model,
                        icfg,
                        &st.truth,
                        &EventSpec::true_anomaly(*ta, 1),
                        window.max(1.0),
                    )
                    .map(|(_, state)| state)
                }
            } else {
                let spec = if is_perilune {
                    EventSpec::perilune(1)
                } else {
                    EventSpec::true_anomaly(*ta, 1)
                };
                find_event(&self.truth_model, icfg, &st.truth, &spec, horizon)
                    .map(|(_, state)| state)
            };
            match located {
                Ok(state) => st.truth = state,
                Err(e) => {
                    let skippable = self.mode == LoopMode::FilterOnly
                        && !is_perilune
                        && matches!(e, crate::dynamics::DynamicsError::EventNotFound(_));
                    if skippable {
                        continue;
                    }
                    failure = Some(format!("truth event search failed: {e}"));
                    break 'outer;
                }
            }
            for action in actions {
                if let Err(e) = self.act(
                    *action,
                    *ta,
                    &mut st,
                    &mut meas_rng,
                    &mut att_rng,
                    &mut od_rng,
                    &mut exec_rng,
                ) {
                    failure = Some(e);
                    break 'outer;
                }
            }
            if is_perilune {
                st.revs_done += 1;
            }
        }

        let duration_s = st.truth.epoch - t0;
        let duration_days = super::report::duration_days(duration_s.max(1.0));
        let cumulative_dv_cm_s = st.cum_dv_km_s * 1e5;
        let success = failure.is_none();
        let filter_stats = if self.mode != LoopMode::ControlOnly && st.recorded > 0 {
            Some(FilterRunStats {
                recorded_steps: st.recorded,
                containment_3sigma: st.inside_3sigma as f64 / st.recorded as f64,
                rms_pos_err_km: (st.sum_sq_pos / st.recorded as f64).sqrt(),
                rms_vel_err_m_s: (st.sum_sq_vel / st.recorded as f64).sqrt() * 1e3,
                measurements_accepted: st.meas_ok,
                measurements_skipped: st.meas_skipped,
            })
        } else {
            None
        };
        RunOutput {
            report: RunReport {
                run: run_idx,
                success,
                failure,
                duration_days,
                cumulative_dv_cm_s,
                yearly_dv_cm_s: super::report::yearly_cost(cumulative_dv_cm_s, duration_days),
                perilune_radius_min_km: st.peri_min,
                perilune_radius_max_km: st.peri_max,
                maneuvers: st.maneuvers,
                filter: filter_stats,
            },
            rows: st.rows,
            sigma_vz_samples: st.sigma_vz,
        }
    }

    fn build_schedule(&self) -> Vec<(f64, Vec<Action>)> {
        let mut items: Vec<(f64, Vec<Action>)> = vec![(0.0, vec![Action::Perilune])];
        let mut add = |ta: f64, action: Action| {
            if let Some((_, actions)) = items.iter_mut().find(|(t, _)| (*t - ta).abs() < 1e-9) {
                if !actions.contains(&action) {
                    actions.push(action);
                }
            } else {
                items.push((ta, vec![action]));
            }
        };
        if let Some(step) = self.config.campaign.record_ta_step_deg {
            if self.mode != LoopMode::ControlOnly && step > 0.0 {
                let mut ta = step;
                while ta < 360.0 {
                    add(ta, Action::Record);
                    ta += step;
                }
            }
        }
        if self.mode != LoopMode::ControlOnly {
            for &ta in &self.config.measurements.true_anomalies_deg {
                add(ta.rem_euclid(360.0), Action::Measure);
            }
        }
        if self.mode != LoopMode::FilterOnly {
            add(self.controller.burn_ta_deg.rem_euclid(360.0), Action::Control);
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        // actions at one epoch run in a fixed order: measure, control, record
        for (_, actions) in &mut items {
            actions.sort_by_key(|a| match a {
                Action::Perilune => 0,
                Action::Measure => 1,
                Action::Control => 2,
                Action::Record => 3,
            });
        }
        items
    }

    #[allow(clippy::too_many_arguments)]
    fn act(
        &self,
        action: Action,
        ta: f64,
        st: &mut LoopState,
        meas_rng: &mut ChaCha12Rng,
        att_rng: &mut ChaCha12Rng,
        od_rng: &mut ChaCha12Rng,
        exec_rng: &mut ChaCha12Rng,
    ) -> Result<(), String> {
        let t = st.truth.epoch;
        match action {
            Action::Perilune => {
                let radius = st.truth.r.norm();
                st.peri_min = st.peri_min.min(radius);
                st.peri_max = st.peri_max.max(radius);
                st.rows.push(RecordRow {
                    t_s: t.as_secs(),
                    ta_deg: 0.0,
                    kind: RowKind::Perilune,
                    truth: state_array(&st.truth),
                    estimate: None,
                    sigma: None,
                    flag: None,
                });
                // an uncontrolled (filter-only) trajectory is allowed to
                // wander; the survival band defines divergence only when a
                // station-keeping controller is supposed to hold the orbit
                if self.mode != LoopMode::FilterOnly && !(1.5e3..=1.0e4).contains(&radius) {
                    return Err(format!("perilune radius {radius:.1} km outside survival band"));
                }
                Ok(())
            }
            Action::Record => {
                self.predict_filter_to(st, t)?;
                self.record_step(st, ta, RowKind::Record, None);
                Ok(())
            }
            Action::Measure => {
                self.predict_filter_to(st, t)?;
                let flag = self.take_measurement(st, meas_rng, att_rng)?;
                let kind = if flag.is_none() {
                    st.meas_ok += 1;
                    RowKind::Measurement
                } else {
                    st.meas_skipped += 1;
                    RowKind::MeasurementSkipped
                };
                self.record_step(st, ta, kind, flag);
                Ok(())
            }
            Action::Control => {
                self.predict_filter_to(st, t)?;
                self.control_action(st, ta, od_rng, exec_rng)
            }
        }
    }

    fn predict_filter_to(&self, st: &mut LoopState, t: Epoch) -> Result<(), String> {
        let Some(fs) = st.filter.as_ref() else {
            return Ok(());
        };
        if t <= fs.mean.epoch {
            return Ok(());
        }
        let icfg = &self.config.dynamics.integrator;
        let pn = &self.config.filter.process_noise;
        let next = match self.config.filter.kind {
            FilterKind::Ekf => ekf_predict(&self.nominal_model, icfg, pn, fs, t),
            FilterKind::Ukf => ukf_predict(
                &self.nominal_model,
                icfg,
                pn,
                &self.config.filter.ut,
                fs,
                t,
            ),
        }
        .map_err(|e| format!("filter prediction failed: {e}"))?;
        st.filter = Some(next);
        Ok(())
    }

    /// Point the camera per the estimate, image the truth, solve, update.
    /// Returns a skip reason when the measurement is unusable.
    fn take_measurement(
        &self,
        st: &mut LoopState,
        meas_rng: &mut ChaCha12Rng,
        att_rng: &mut ChaCha12Rng,
    ) -> Result<Option<String>, String> {
        let fs = st
            .filter
            .as_ref()
            .expect("measurements only occur in filtered modes");
        let t = st.truth.epoch;
        let provider = &self.nominal_model.provider;

        // believed pointing: boresight from the estimate toward the Moon
        let z_c = (-fs.mean.r.normalize()).into_raw();
        let helper = if z_c.z.abs() < 0.9 {
            Vector3::z()
        } else {
            Vector3::x()
        };
        let x_c = (helper - z_c * helper.dot(&z_c)).normalize();
        let y_c = z_c.cross(&x_c);
        let i_from_cam: Rot<Cam, Inertial> = Rot::from_matrix_unchecked(
            nalgebra::Matrix3::from_columns(&[x_c, y_c, z_c]),
        );
        let pa_from_i = provider
            .moon_orientation(t)
            .map_err(|e| format!("moon orientation: {e}"))?;
        let believed: Rot<Cam, MoonPa> = pa_from_i * i_from_cam;

        // the physical camera carries an unknown misalignment on top
        let dt = sample_attitude_perturbation(self.camera.sigma_attitude_rad, att_rng);
        let true_attitude: Rot<Cam, MoonPa> =
            Rot::from_matrix_unchecked(dt * believed.matrix());

        let r_p_true = pa_from_i.apply(&st.truth.r);
        let r_c_true = true_attitude.inverse().apply(&r_p_true);
        let sun_dir_c = match self.truth_model.provider.state(crate::ephem::Body::Sun, t) {
            Ok(d_sun) => true_attitude
                .inverse()
                .apply(&pa_from_i.apply(&d_sun.normalize())),
            // sunless providers light the limb from a fixed direction
            Err(_) => V3::<Cam>::new(1.0, 0.0, 0.0),
        };

        let m_requested = flight_limb_count(
            &self.camera,
            &self.shape,
            st.truth.r.norm(),
            self.config.measurements.sector_deg,
            self.config.measurements.density_per_pixel,
            self.config.measurements.m_min,
            self.config.measurements.m_max,
        );
        let pixels = match crate::opnav::synthesize_limb_points(
            &self.camera,
            &self.shape,
            &true_attitude,
            &r_c_true,
            &sun_dir_c,
            self.config.measurements.sector_deg,
            m_requested,
            meas_rng,
        ) {
            Ok(px) => px,
            Err(e) => return Ok(Some(e.to_string())),
        };
        let obs = LimbObservation {
            pixels,
            pa_from_cam: believed,
        };
        let meas = match measure(&self.camera, &self.shape, &believed, &obs) {
            Ok(m) => m,
            Err(e) => return Ok(Some(e.to_string())),
        };
        let (y, r_cov) = rotate_measurement_to_inertial(&meas, provider, t)
            .map_err(|e| format!("measurement rotation: {e}"))?;
        match measurement_update(fs, &y, &r_cov, self.config.filter.innovation_gate_chi2) {
            Ok(updated) => {
                st.filter = Some(updated);
                Ok(None)
            }
            Err(crate::filters::FilterError::InnovationGateExceeded { .. }) => {
                Ok(Some("innovation-gated".to_string()))
            }
            Err(e) => Err(format!("measurement update failed: {e}")),
        }
    }

    fn control_action(
        &self,
        st: &mut LoopState,
        ta: f64,
        od_rng: &mut ChaCha12Rng,
        exec_rng: &mut ChaCha12Rng,
    ) -> Result<(), String> {
        let icfg = &self.config.dynamics.integrator;
        let errors = &self.config.errors;
        let t = st.truth.epoch;

        // the controller's knowledge of the state
        let estimate = match self.mode {
            LoopMode::ControlOnly => {
                let dr = sample_error_vector(errors.od_pos_3sigma_km, od_rng);
                let dv = sample_error_vector(errors.od_vel_3sigma_cm_s * 1e-5, od_rng);
                let mean = StateVector::new(
                    t,
                    V3::from_raw(st.truth.r.raw() + dr),
                    V3::from_raw(st.truth.v.raw() + dv),
                );
                FilterState::from_sigmas(
                    mean,
                    per_axis_sigma(errors.od_pos_3sigma_km),
                    per_axis_sigma(errors.od_vel_3sigma_cm_s * 1e-5),
                )
            }
            _ => st
                .filter
                .clone()
                .expect("filtered modes carry a filter state"),
        };

        let target = self
            .reference
            .nth_perilune_after(t, self.controller.n_perilune)
            .map_err(|e| format!("target lookup: {e}"))?;
        let result = plan_maneuver(&self.nominal_model, icfg, &self.controller, &estimate, &target)
            .map_err(|e| format!("maneuver planning: {e}"))?;

        if result.triggered {
            let commanded = result.dv_km_s.into_raw();
            let executed = corrupt_maneuver(
                &commanded,
                errors.ctrl_mag_rel_3sigma,
                errors.ctrl_dir_3sigma_deg,
                exec_rng,
            );
            st.truth = st.truth.with_dv(&V3::from_raw(executed));
            st.cum_dv_km_s += commanded.norm();
            if let Some(fs) = st.filter.as_mut() {
                // the filter assumes the commanded maneuver is executed
                fs.mean = fs.mean.with_dv(&V3::from_raw(commanded));
                if self.config.campaign.inflate_exec_cov {
                    inflate_execution_covariance(
                        fs,
                        &commanded,
                        errors.ctrl_mag_rel_3sigma,
                        errors.ctrl_dir_3sigma_deg,
                    );
                }
            }
        }
        st.maneuvers.push(ManeuverRecord {
            epoch_s: t.as_secs(),
            ta_deg: ta,
            dv_cm_s: result.dv_km_s.norm() * 1e5,
            triggered: result.triggered,
            converged: result.converged,
            iterations: result.iterations,
            predicted_violation_m_s: result.predicted_violation_m_s,
            achieved_violation_m_s: result.achieved_violation_m_s,
        });
        let estimate_row = match self.mode {
            LoopMode::ControlOnly => Some(state_array(&estimate.mean)),
            _ => st.filter.as_ref().map(|f| state_array(&f.mean)),
        };
        st.rows.push(RecordRow {
            t_s: t.as_secs(),
            ta_deg: ta,
            kind: RowKind::Maneuver,
            truth: state_array(&st.truth),
            estimate: estimate_row,
            sigma: st.filter.as_ref().map(|f| sigma_array(f)),
            flag: Some(format!(
                "triggered={} dv_cm_s={:.4}",
                result.triggered,
                result.dv_km_s.norm() * 1e5
            )),
        });
        Ok(())
    }

    fn record_step(&self, st: &mut LoopState, ta: f64, kind: RowKind, flag: Option<String>) {
        let (estimate, sigma) = match st.filter.as_ref() {
            Some(f) => (Some(state_array(&f.mean)), Some(sigma_array(f))),
            None => (None, None),
        };
        if let Some(fs) = st.filter.as_ref() {
            st.recorded += 1;
            if let Some(d2) = fs.position_mahalanobis2(&st.truth) {
                if d2 <= 9.0 {
                    st.inside_3sigma += 1;
                }
            }
            let pos_err = (st.truth.r - fs.mean.r).norm();
            let vel_err = (st.truth.v - fs.mean.v).norm();
            st.sum_sq_pos += pos_err * pos_err;
            st.sum_sq_vel += vel_err * vel_err;
            let sig = fs.sigmas_si();
            st.sigma_vz.push((ta, sig[5]));
        }
        st.rows.push(RecordRow {
            t_s: st.truth.epoch.as_secs(),
            ta_deg: ta,
            kind,
            truth: state_array(&st.truth),
            estimate,
            sigma,
            flag,
        });
    }
}

/// Add the execution-error covariance of a commanded maneuver to the
/// velocity block (diagonal approximation rotated to frame I).
fn inflate_execution_covariance(
    fs: &mut FilterState,
    commanded_km_s: &Vector3<f64>,
    mag_rel_3sigma: f64,
    dir_3sigma_deg: f64,
) {
    let mag = commanded_km_s.norm();
    if mag == 0.0 {
        return;
    }
    let u_hat = commanded_km_s / mag;
    let sigma_along = mag * mag_rel_3sigma / 3.0;
    let sigma_cross = mag * (dir_3sigma_deg / 3.0).to_radians();
    let outer = u_hat * u_hat.transpose();
    let cov_v = outer * (sigma_along * sigma_along)
        + (nalgebra::Matrix3::identity() - outer) * (sigma_cross * sigma_cross);
    let cov_v_canonical = cov_v / (VU_KM_S * VU_KM_S);
    let mut inflated: Matrix6<f64> = fs.cov_canonical;
    for i in 0..3 {
        for j in 0..3 {
            inflated[(i + 3, j + 3)] += cov_v_canonical[(i, j)];
        }
    }
    fs.cov_canonical = inflated;
}

fn state_array(s: &StateVector) -> [f64; 6] {
    let v = s.to_vec6();
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

fn sigma_array(fs: &FilterState) -> [f64; 6] {
    let s = fs.sigmas_si();
    [s[0], s[1], s[2], s[3], s[4], s[5]]
}
