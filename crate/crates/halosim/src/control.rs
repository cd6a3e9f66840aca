//! x-axis crossing station-keeping control.
//!
//! The targeting constraint is the rotating-frame x-velocity at the N-th
//! downstream perilune, matched to the reference value within a tolerance.
//! Two solvers are provided: differential correction (minimum-norm Newton
//! updates that drive the violation toward zero) and the sequentially
//! linearized minimization (the exact minimum-norm control satisfying the
//! linearized slab constraint, found by projecting the origin onto two
//! half-spaces). Either can target the unscented mean of the predicted
//! x-velocity instead of the point prediction, which folds the filter
//! covariance into the targeting.
//!
//! Control functions only ever see the filter state (or an externally
//! corrupted estimate) — never the simulation truth.

pub mod projection;

use crate::dynamics::{DynamicsError, DynamicsModel, StateVector};
use crate::ephem::EphemError;
use crate::epoch::Epoch;
use crate::events::{find_event, find_event_with_stm, EventSpec};
use crate::filters::{sigma_points, FilterError, FilterState, UtConfig};
use crate::frames::{Inertial, V3};
use crate::integrate::IntegratorConfig;
use crate::reference::TargetSpec;
use nalgebra::{RowVector3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control row vanished (|dF/du| = {norm}); control cannot influence the target")]
    DegenerateRow { norm: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Ephemeris(#[from] EphemError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Dc,
    Slmp,
    UtDc,
    UtSlmp,
}

impl Method {
    pub fn uses_ut(&self) -> bool {
        matches!(self, Method::UtDc | Method::UtSlmp)
    }

    fn is_slmp(&self) -> bool {
        matches!(self, Method::Slmp | Method::UtSlmp)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub method: Method,
    /// Which downstream perilune is targeted.
    pub n_perilune: usize,
    /// Trigger threshold on the predicted violation, m/s.
    pub vx_trig_m_s: f64,
    /// Targeting tolerance, m/s. Hysteresis when strictly below the trigger.
    pub vx_tol_m_s: f64,
    /// Safety factor shrinking the linearized slab (SLMP only).
    pub safety: f64,
    pub maxiter: usize,
    /// True anomaly at which control is evaluated, degrees.
    pub burn_ta_deg: f64,
    pub ut: UtConfig,
    /// Propagate all sigma points to the mean's perilune epoch instead of
    /// each point's own perilune event.
    pub ut_common_epoch: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            method: Method::Dc,
            n_perilune: 7,
            vx_trig_m_s: 10.0,
            vx_tol_m_s: 1.0,
            safety: 0.9,
            maxiter: 10,
            burn_ta_deg: 180.0,
            ut: UtConfig::default(),
            ut_common_epoch: false,
        }
    }
}

/// Outcome of a control evaluation at one control point.
#[derive(Debug, Clone, Copy)]
pub struct ManeuverResult {
    /// Commanded impulsive velocity change, frame I, km/s. Zero when the
    /// trigger did not fire.
    pub dv_km_s: V3<Inertial>,
    /// Minimum-norm updates (DC) or linearized subproblems (SLMP) applied.
    pub iterations: usize,
    /// Nonlinear violation after the maneuver, m/s.
    pub achieved_violation_m_s: f64,
    /// Pre-maneuver predicted violation, m/s.
    pub predicted_violation_m_s: f64,
    pub triggered: bool,
    pub converged: bool,
}

/// Point prediction of the rotating-frame x-velocity at the N-th perilune,
/// with the sensitivity row to an impulsive dv at departure.
#[derive(Debug, Clone, Copy)]
pub struct VxPrediction {
    pub vx_em_km_s: f64,
    pub t_f: Epoch,
    /// d(vx at t_f) / d(dv at t0), 1-by-3, dimensionless.
    pub b_row: RowVector3<f64>,
}

fn horizon_s(t0: Epoch, target: &TargetSpec) -> f64 {
    1.3 * (target.epoch - t0).abs() + 3.0 * 86400.0
}

/// Propagate `state0` (estimate plus any accumulated control) to its N-th
/// perilune and read off the rotating x-velocity and its dv sensitivity.
///
/// The sensitivity row is event-consistent: because the perilune epoch
/// itself shifts with the maneuver, the fixed-epoch STM row is corrected by
/// the event-time variation term, dt = -(grad g . Phi du) / (dg/dt) with
/// g = r.v. Without it the row is tens of percent off near perilune and
/// the correction loop loses its quadratic convergence.
pub fn predict_vx_at_target(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    state0: &StateVector,
    target: &TargetSpec,
    n_perilune: usize,
) -> Result<VxPrediction, ControlError> {
    let (t_f, state_f, stm) = find_event_with_stm(
        model,
        cfg,
        state0,
        &EventSpec::perilune(n_perilune),
        horizon_s(state0.epoch, target),
    )?;
    let map = model.provider.em_from_inertial(t_f)?;
    let (r_em, v_em) = map.apply(&state_f.r, &state_f.v);
    let phi_dv = stm.dv_block();
    let fixed_time_row = (map.matrix6() * phi_dv).row(3).into_owned();

    // event-time variation of the perilune crossing
    let r = state_f.r.raw();
    let v = state_f.v.raw();
    let a_i = model.acceleration(t_f, &state_f.r)?.into_raw();
    let dg_dt = v.norm_squared() + r.dot(&a_i);
    let mut grad_g = nalgebra::Vector6::zeros();
    grad_g.fixed_rows_mut::<3>(0).copy_from(v);
    grad_g.fixed_rows_mut::<3>(3).copy_from(r);
    let dt_row = -(grad_g.transpose() * phi_dv) / dg_dt;

    // d(vx_em)/dt: rotating-frame x-acceleration
    let omega = map.omega_to;
    let a_rot = map.rot.matrix() * a_i
        - 2.0 * omega.cross(v_em.raw())
        - omega.cross(&omega.cross(r_em.raw()));
    let b_row = fixed_time_row + dt_row * a_rot.x;

    Ok(VxPrediction {
        vx_em_km_s: v_em.x(),
        t_f,
        b_row,
    })
}

/// Unscented mean of the predicted x-velocity: sigma points from the filter
/// state (each shifted by the accumulated control) propagated to their own
/// N-th perilune (or to the mean's epoch when configured), then averaged
/// with the mean weights. The sensitivity row comes from the mean point.
pub fn ut_mean_vx(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    ccfg: &ControllerConfig,
    fs: &FilterState,
    dv_accum: &V3<Inertial>,
    target: &TargetSpec,
) -> Result<VxPrediction, ControlError> {
    let points = sigma_points(fs, &ccfg.ut)?;
    let (wm, _) = ccfg.ut.weights(6);
    let mean_shifted = points[0].with_dv(dv_accum);
    let mean_pred = predict_vx_at_target(model, cfg, &mean_shifted, target, ccfg.n_perilune)?;

    let mut acc = wm[0] * mean_pred.vx_em_km_s;
    for (point, w) in points.iter().zip(wm.iter()).skip(1) {
        let shifted = point.with_dv(dv_accum);
        let vx = if ccfg.ut_common_epoch {
            let s_f = model.propagate(cfg, &shifted, mean_pred.t_f)?;
            let map = model.provider.em_from_inertial(mean_pred.t_f)?;
            let (_, v_em) = map.apply(&s_f.r, &s_f.v);
            v_em.x()
        } else {
            let (t_f, s_f) = find_event(
                model,
                cfg,
                &shifted,
                &EventSpec::perilune(ccfg.n_perilune),
                horizon_s(shifted.epoch, target),
            )?;
            let map = model.provider.em_from_inertial(t_f)?;
            let (_, v_em) = map.apply(&s_f.r, &s_f.v);
            v_em.x()
        };
        acc += w * vx;
    }
    Ok(VxPrediction {
        vx_em_km_s: acc,
        t_f: mean_pred.t_f,
        b_row: mean_pred.b_row,
    })
}

/// Trigger test on the predicted violation (closed threshold).
pub fn evaluate_trigger(violation_m_s: f64, ccfg: &ControllerConfig) -> bool {
    violation_m_s >= ccfg.vx_trig_m_s
}

fn predict(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    ccfg: &ControllerConfig,
    fs: &FilterState,
    dv_accum: &V3<Inertial>,
    target: &TargetSpec,
) -> Result<VxPrediction, ControlError> {
    if ccfg.method.uses_ut() {
        ut_mean_vx(model, cfg, ccfg, fs, dv_accum, target)
    } else {
        predict_vx_at_target(
            model,
            cfg,
            &fs.mean.with_dv(dv_accum),
            target,
            ccfg.n_perilune,
        )
    }
}

/// Evaluate the trigger and, if it fires, compute the station-keeping
/// maneuver with the configured method.
pub fn plan_maneuver(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    ccfg: &ControllerConfig,
    fs: &FilterState,
    target: &TargetSpec,
) -> Result<ManeuverResult, ControlError> {
    let first = predict(model, cfg, ccfg, fs, &V3::zeros(), target)?;
    let violation0 = (first.vx_em_km_s - target.vbar_x_km_s).abs() * 1000.0;
    if !evaluate_trigger(violation0, ccfg) {
        return Ok(ManeuverResult {
            dv_km_s: V3::zeros(),
            iterations: 0,
            achieved_violation_m_s: violation0,
            predicted_violation_m_s: violation0,
            triggered: false,
            converged: true,
        });
    }
    let mut result = if ccfg.method.is_slmp() {
        solve_slmp(model, cfg, ccfg, fs, target, first)?
    } else {
        solve_dc(model, cfg, ccfg, fs, target, first)?
    };
    result.predicted_violation_m_s = violation0;
    Ok(result)
}

/// Differential correction: minimum-norm Newton updates on the scalar
/// violation, checked against the nonlinear prediction at the top of each
/// iteration. The targeted perilune epoch is re-solved every iteration.
fn solve_dc(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    ccfg: &ControllerConfig,
    fs: &FilterState,
    target: &TargetSpec,
    first: VxPrediction,
) -> Result<ManeuverResult, ControlError> {
    let tol_km_s = ccfg.vx_tol_m_s / 1000.0;
    let mut dv = Vector3::<f64>::zeros();
    let mut updates = 0usize;
    let mut pred = first;
    let mut best: (Vector3<f64>, f64, usize) = (dv, f64::INFINITY, 0);
    loop {
        let f = pred.vx_em_km_s - target.vbar_x_km_s;
        if f.abs() < best.1 {
            best = (dv, f.abs(), updates);
        }
        if f.abs() <= tol_km_s {
            return Ok(ManeuverResult {
                dv_km_s: V3::from_raw(dv),
                iterations: updates,
                achieved_violation_m_s: f.abs() * 1000.0,
                predicted_violation_m_s: 0.0,
                triggered: true,
                converged: true,
            });
        }
        if updates >= ccfg.maxiter {
            return Ok(ManeuverResult {
                dv_km_s: V3::from_raw(best.0),
                iterations: best.2,
                achieved_violation_m_s: best.1 * 1000.0,
                predicted_violation_m_s: 0.0,
                triggered: true,
                converged: false,
            });
        }
        let df = pred.b_row.transpose();
        let norm2 = df.norm_squared();
        if norm2.sqrt() < 1e-14 {
            return Err(ControlError::DegenerateRow { norm: norm2.sqrt() });
        }
        dv -= df * (f / norm2);
        updates += 1;
        pred = predict(model, cfg, ccfg, fs, &V3::from_raw(dv), target)?;
    }
}

/// Sequential linearization: per iteration, project the origin onto the
/// slab |vx0 + B u - vbar| <= s*tol and accumulate the step, until the
/// nonlinear violation clears the (unshrunk) tolerance.
fn solve_slmp(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    ccfg: &ControllerConfig,
    fs: &FilterState,
    target: &TargetSpec,
    first: VxPrediction,
) -> Result<ManeuverResult, ControlError> {
    let tol_km_s = ccfg.vx_tol_m_s / 1000.0;
    let tol_shrunk = ccfg.safety * tol_km_s;
    let mut dv = Vector3::<f64>::zeros();
    let mut iterations = 0usize;
    let mut pred = first;
    let mut best: (Vector3<f64>, f64, usize) = (dv, f64::INFINITY, 0);
    loop {
        let residual = pred.vx_em_km_s - target.vbar_x_km_s;
        if residual.abs() < best.1 {
            best = (dv, residual.abs(), iterations);
        }
        if residual.abs() <= tol_km_s {
            return Ok(ManeuverResult {
                dv_km_s: V3::from_raw(dv),
                iterations,
                achieved_violation_m_s: residual.abs() * 1000.0,
                predicted_violation_m_s: 0.0,
                triggered: true,
                converged: true,
            });
        }
        if iterations >= ccfg.maxiter {
            return Ok(ManeuverResult {
                dv_km_s: V3::from_raw(best.0),
                iterations: best.2,
                achieved_violation_m_s: best.1 * 1000.0,
                predicted_violation_m_s: 0.0,
                triggered: true,
                converged: false,
            });
        }
        let xi1 = pred.b_row.transpose();
        if xi1.norm() < 1e-14 {
            return Err(ControlError::DegenerateRow { norm: xi1.norm() });
        }
        let xi2 = -xi1;
        let eta1 = tol_shrunk - residual;
        let eta2 = tol_shrunk + residual;
        let (nu1, nu2) = projection::projection_coefficients(
            &Vector3::zeros(),
            &xi1,
            eta1,
            &xi2,
            eta2,
        );
        // anti-parallel slab faces: the two-active case is geometrically
        // unreachable while the slab has interior
        debug_assert!(nu1 == 0.0 || nu2 == 0.0);
        let step = -xi1 * nu1 - xi2 * nu2;
        dv += step;
        iterations += 1;
        pred = predict(model, cfg, ccfg, fs, &V3::from_raw(dv), target)?;
    }
}
