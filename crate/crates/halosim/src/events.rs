//! Trajectory event detection.
//!
//! Events are detected by sign changes of a scalar event function across
//! accepted integrator steps and refined by a bracketed secant/bisection
//! hybrid. Refinement candidates are obtained by re-propagating from the
//! bracketing step's start state rather than interpolating dense output,
//! which stays robust through the perilune sensitivity spike.

use crate::constants::TU_S;
use crate::dynamics::{
    pack_state_canonical, stm_canonical_to_si, unpack_state_canonical, CanonicalRhs,
    DynamicsError, DynamicsModel, StateVector, Stm,
};
use crate::epoch::Epoch;
use crate::integrate::{integrate, IntegratorConfig};
use crate::kepler::{osculating_true_anomaly_rv, wrap_angle_deg};
use nalgebra::{Matrix6, SVector, Vector3};
use serde::{Deserialize, Serialize};
use std::ops::ControlFlow;

/// Default width of the refined event bracket, seconds.
pub const DEFAULT_EVENT_TOL_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// Radial-rate sign change from negative to positive.
    Perilune,
    /// Radial-rate sign change from positive to negative.
    Apolune,
    /// Osculating true anomaly crossing the given value, degrees.
    TrueAnomalyDeg(f64),
    /// y = 0 crossing in the Earth-Moon rotating frame.
    EmXzPlane,
}

impl EventKind {
    fn label(&self) -> String {
        match self {
            EventKind::Perilune => "perilune".into(),
            EventKind::Apolune => "apolune".into(),
            EventKind::TrueAnomalyDeg(d) => format!("true-anomaly {d} deg"),
            EventKind::EmXzPlane => "em-xz-plane".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventDirection {
    Increasing,
    Decreasing,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub direction: EventDirection,
    /// Which occurrence to return (1 = first).
    pub count: usize,
}

impl EventSpec {
    pub fn perilune(count: usize) -> Self {
        EventSpec {
            kind: EventKind::Perilune,
            direction: EventDirection::Increasing,
            count,
        }
    }

    pub fn apolune(count: usize) -> Self {
        EventSpec {
            kind: EventKind::Apolune,
            direction: EventDirection::Decreasing,
            count,
        }
    }

    pub fn true_anomaly(deg: f64, count: usize) -> Self {
        EventSpec {
            kind: EventKind::TrueAnomalyDeg(deg),
            direction: EventDirection::Increasing,
            count,
        }
    }

    pub fn em_xz_plane(count: usize) -> Self {
        EventSpec {
            kind: EventKind::EmXzPlane,
            direction: EventDirection::Any,
            count,
        }
    }

    /// Perilune/apolune have a physically fixed crossing direction; the
    /// configured direction only applies to the other kinds.
    fn effective_direction(&self) -> EventDirection {
        match self.kind {
            EventKind::Perilune => EventDirection::Increasing,
            EventKind::Apolune => EventDirection::Decreasing,
            _ => self.direction,
        }
    }
}

/// Locate the `spec.count`-th event downstream of `state0` within `horizon_s`.
pub fn find_event(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    state0: &StateVector,
    spec: &EventSpec,
    horizon_s: f64,
) -> Result<(Epoch, StateVector), DynamicsError> {
    find_event_opts(model, cfg, state0, spec, horizon_s, DEFAULT_EVENT_TOL_S)
}

pub fn find_event_opts(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    state0: &StateVector,
    spec: &EventSpec,
    horizon_s: f64,
    time_tol_s: f64,
) -> Result<(Epoch, StateVector), DynamicsError> {
    let t_ref = state0.epoch;
    let y0 = pack_state_canonical(&state0.to_vec6());
    let rhs = CanonicalRhs::new(model, t_ref);
    let f = |tau: f64, y: &SVector<f64, 6>| rhs.state_rhs(tau, y);
    let (tau, y) = search(model, cfg, t_ref, y0, &f, &rhs, spec, horizon_s, time_tol_s)?;
    Ok((
        t_ref + tau * TU_S,
        StateVector::from_vec6(t_ref + tau * TU_S, &unpack_state_canonical(&y)),
    ))
}

/// Same as [`find_event`], but carries the state transition matrix from
/// `state0.epoch` to the event time.
pub fn find_event_with_stm(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    state0: &StateVector,
    spec: &EventSpec,
    horizon_s: f64,
) -> Result<(Epoch, StateVector, Stm), DynamicsError> {
    let t_ref = state0.epoch;
    let mut y0 = SVector::<f64, 42>::zeros();
    y0.fixed_rows_mut::<6>(0)
        .copy_from(&pack_state_canonical(&state0.to_vec6()));
    for i in 0..6 {
        y0[6 + 7 * i] = 1.0;
    }
    let rhs = CanonicalRhs::new(model, t_ref);
    let f = |tau: f64, y: &SVector<f64, 42>| rhs.stm_rhs(tau, y);
    let (tau, y) = search(
        model,
        cfg,
        t_ref,
        y0,
        &f,
        &rhs,
        spec,
        horizon_s,
        DEFAULT_EVENT_TOL_S,
    )?;
    let epoch = t_ref + tau * TU_S;
    let state = StateVector::from_vec6(
        epoch,
        &unpack_state_canonical(&y.fixed_rows::<6>(0).into_owned()),
    );
    let mut phi = Matrix6::zeros();
    for col in 0..6 {
        for row in 0..6 {
            phi[(row, col)] = y[6 + 6 * col + row];
        }
    }
    Ok((
        epoch,
        state,
        Stm {
            matrix: stm_canonical_to_si(&phi),
            from: t_ref,
            to: epoch,
        },
    ))
}

/// Event function in canonical units; `tau` is canonical time past `t_ref`.
fn event_g(
    model: &DynamicsModel,
    spec: &EventSpec,
    t_ref: Epoch,
    tau: f64,
    y6: &SVector<f64, 6>,
) -> Result<f64, DynamicsError> {
    match spec.kind {
        EventKind::Perilune | EventKind::Apolune => {
            let r = Vector3::new(y6[0], y6[1], y6[2]);
            let v = Vector3::new(y6[3], y6[4], y6[5]);
            Ok(r.dot(&v))
        }
        EventKind::TrueAnomalyDeg(target) => {
            let rv = unpack_state_canonical(y6);
            let ta = osculating_true_anomaly_rv(
                &Vector3::new(rv[0], rv[1], rv[2]),
                &Vector3::new(rv[3], rv[4], rv[5]),
                model.mu_moon,
            )
            .map_err(|e| DynamicsError::DegenerateEvent(e.to_string()))?;
            Ok(wrap_angle_deg(ta - target))
        }
        EventKind::EmXzPlane => {
            let t = t_ref + tau * TU_S;
            let map = model.provider.em_from_inertial(t)?;
            let rv = unpack_state_canonical(y6);
            let r_em = map.rot.matrix() * Vector3::new(rv[0], rv[1], rv[2]);
            Ok(r_em.y)
        }
    }
}

/// Scale of the event function, used only to recognize a degenerate (always
/// ~zero) event function.
fn event_scale(spec: &EventSpec, y6: &SVector<f64, 6>) -> f64 {
    match spec.kind {
        EventKind::Perilune | EventKind::Apolune => {
            let r = Vector3::new(y6[0], y6[1], y6[2]);
            let v = Vector3::new(y6[3], y6[4], y6[5]);
            (r.norm() * v.norm()).max(1e-30)
        }
        EventKind::TrueAnomalyDeg(_) => 180.0,
        EventKind::EmXzPlane => {
            Vector3::new(y6[0], y6[1], y6[2]).norm().max(1e-30)
        }
    }
}

fn is_crossing(g_prev: f64, g_new: f64, dir: EventDirection) -> bool {
    match dir {
        EventDirection::Increasing => g_prev < 0.0 && g_new >= 0.0,
        EventDirection::Decreasing => g_prev > 0.0 && g_new <= 0.0,
        EventDirection::Any => {
            (g_prev < 0.0 && g_new >= 0.0) || (g_prev > 0.0 && g_new <= 0.0)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn search<const N: usize>(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    t_ref: Epoch,
    y0: SVector<f64, N>,
    rhs_fn: &dyn Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    rhs: &CanonicalRhs<'_>,
    spec: &EventSpec,
    horizon_s: f64,
    time_tol_s: f64,
) -> Result<(f64, SVector<f64, N>), DynamicsError> {
    assert!(horizon_s > 0.0, "event horizon must be positive");
    let dir = spec.effective_direction();
    let first6 = |y: &SVector<f64, N>| y.fixed_rows::<6>(0).into_owned();

    let mut g_prev = event_g(model, spec, t_ref, 0.0, &first6(&y0))?;
    let mut max_ratio: f64 = (g_prev / event_scale(spec, &first6(&y0))).abs();
    let mut found = 0usize;
    let mut g_err: Option<DynamicsError> = None;
    let mut bracket: Option<(f64, SVector<f64, N>, f64, f64, f64)> = None;

    let tau_end = horizon_s / TU_S;
    let mut f = |tau: f64, y: &SVector<f64, N>| rhs_fn(tau, y);
    let result = integrate(&mut f, 0.0, y0, tau_end, cfg, |step| {
        let y6 = first6(step.y);
        match event_g(model, spec, t_ref, step.t, &y6) {
            Err(e) => {
                g_err = Some(e);
                ControlFlow::Break(())
            }
            Ok(g_new) => {
                max_ratio = max_ratio.max((g_new / event_scale(spec, &y6)).abs());
                let mut flow = ControlFlow::Continue(());
                let wrap_safe = !matches!(spec.kind, EventKind::TrueAnomalyDeg(_))
                    || (g_prev - g_new).abs() < 180.0;
                // noise-level sign flips of a degenerate event function do
                // not count as crossings
                let significant =
                    g_prev.abs().max(g_new.abs()) > 1e-9 * event_scale(spec, &y6);
                // a start state sitting on the event surface (within noise)
                // is "at" the event, not crossing it
                let starts_on_surface = step.t_prev == 0.0
                    && g_prev.abs() <= 1e-9 * event_scale(spec, &first6(step.y_prev));
                if wrap_safe && significant && !starts_on_surface && is_crossing(g_prev, g_new, dir)
                {
                    found += 1;
                    if found == spec.count {
                        bracket = Some((step.t_prev, *step.y_prev, step.t, g_prev, g_new));
                        flow = ControlFlow::Break(());
                    }
                }
                g_prev = g_new;
                flow
            }
        }
    });
    if std::env::var_os("HALOSIM_DEBUG_EVENTS").is_some() {
        eprintln!(
            "search phase done: result_ok={} bracket={:?} found={found}",
            result.is_ok(),
            bracket.as_ref().map(|b| (b.0, b.2, b.3, b.4))
        );
    }
    rhs.map_result(result, t_ref)?;
    if let Some(e) = g_err {
        return Err(e);
    }

    let Some((tau_a, y_a, tau_b, g_a, g_b)) = bracket else {
        if max_ratio < 1e-9 {
            return Err(DynamicsError::DegenerateEvent(spec.kind.label()));
        }
        return Err(DynamicsError::EventNotFound(spec.kind.label()));
    };

    refine(
        model, cfg, t_ref, spec, rhs_fn, rhs, tau_a, y_a, tau_b, g_a, g_b, time_tol_s,
    )
}

/// Bracketed secant/bisection hybrid. Every candidate state is produced by
/// re-propagating from the left edge of the original bracket.
#[allow(clippy::too_many_arguments)]
fn refine<const N: usize>(
    model: &DynamicsModel,
    cfg: &IntegratorConfig,
    t_ref: Epoch,
    spec: &EventSpec,
    rhs_fn: &dyn Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    rhs: &CanonicalRhs<'_>,
    tau_a0: f64,
    y_a0: SVector<f64, N>,
    tau_b0: f64,
    g_a0: f64,
    g_b0: f64,
    time_tol_s: f64,
) -> Result<(f64, SVector<f64, N>), DynamicsError> {
    let tol_tau = time_tol_s / TU_S;
    let (mut lo, mut hi) = (tau_a0, tau_b0);
    let (mut g_lo, mut g_hi) = (g_a0, g_b0);
    let mut best: (f64, SVector<f64, N>, f64) = (tau_a0, y_a0, g_a0.abs());
    let mut prev_width = hi - lo;
    let mut force_bisect = false;

    let eval = |tau: f64| -> Result<(SVector<f64, N>, f64), DynamicsError> {
        let mut f = |t: f64, y: &SVector<f64, N>| rhs_fn(t, y);
        let result = integrate(&mut f, tau_a0, y_a0, tau, cfg, |_| ControlFlow::Continue(()));
        let (_, y, _) = rhs.map_result(result, t_ref)?;
        let g = event_g(model, spec, t_ref, tau, &y.fixed_rows::<6>(0).into_owned())?;
        Ok((y, g))
    };

    for iter in 0..256 {
        let width = hi - lo;
        if width <= tol_tau {
            break;
        }
        // secant candidate, falling back to bisection when it stalls
        let mut tau_c = if force_bisect || g_hi == g_lo {
            0.5 * (lo + hi)
        } else {
            lo - g_lo * (hi - lo) / (g_hi - g_lo)
        };
        let margin = 0.01 * width;
        if !(lo + margin..=hi - margin).contains(&tau_c) {
            tau_c = 0.5 * (lo + hi);
        }
        let (y_c, g_c) = eval(tau_c)?;
        if g_c.abs() < best.2 {
            best = (tau_c, y_c, g_c.abs());
        }
        let crosses_left = is_crossing(g_lo, g_c, EventDirection::Any) && g_lo != 0.0;
        if crosses_left {
            hi = tau_c;
            g_hi = g_c;
        } else {
            lo = tau_c;
            g_lo = g_c;
        }
        // require steady geometric shrinkage, else bisect next round
        if iter % 2 == 1 {
            force_bisect = (hi - lo) > 0.5 * prev_width;
            prev_width = hi - lo;
        }
    }
    // land exactly on the refined epoch
    let tau_star = 0.5 * (lo + hi);
    let (y_star, _) = eval(tau_star)?;
    Ok((tau_star, y_star))
}
