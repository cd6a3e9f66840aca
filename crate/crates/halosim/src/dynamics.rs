//! Perturbed Moon-centered equations of motion and state/STM propagation.
//!
//! The force model is point-mass lunar gravity plus lunar J2 (evaluated in
//! the principal-axes frame and rotated back), Earth/Sun third-body tidal
//! terms, and cannonball solar radiation pressure. Propagation runs in
//! canonical units internally; the public API is km, km/s, seconds.

use crate::constants::*;
use crate::ephem::{Body, EphemError, EphemerisProvider};
use crate::epoch::Epoch;
use crate::frames::{Inertial, V3};
use crate::integrate::{integrate, IntegrateError, IntegratorConfig, Outcome, Step};
use nalgebra::{Matrix3, Matrix6, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::ops::ControlFlow;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("radius {r_km} km is below the singularity guard")]
    SingularRadius { r_km: f64 },
    #[error(transparent)]
    Ephemeris(#[from] EphemError),
    #[error("step size underflow at t = {t_s} s")]
    StepUnderflow { t_s: f64 },
    #[error("maximum step count exceeded at t = {t_s} s")]
    MaxStepsExceeded { t_s: f64 },
    #[error("non-finite dynamics evaluation at t = {t_s} s")]
    NonFinite { t_s: f64 },
    #[error("event {0} not found within the search horizon")]
    EventNotFound(String),
    #[error("event function is degenerate (|g| stays below noise): {0}")]
    DegenerateEvent(String),
}

/// Spacecraft state: epoch plus inertial position/velocity.
#[derive(Debug, Clone, Copy)]
pub struct StateVector {
    pub epoch: Epoch,
    pub r: V3<Inertial>,
    pub v: V3<Inertial>,
}

impl StateVector {
    pub fn new(epoch: Epoch, r: V3<Inertial>, v: V3<Inertial>) -> Self {
        StateVector { epoch, r, v }
    }

    pub fn from_vec6(epoch: Epoch, rv: &Vector6<f64>) -> Self {
        StateVector {
            epoch,
            r: V3::new(rv[0], rv[1], rv[2]),
            v: V3::new(rv[3], rv[4], rv[5]),
        }
    }

    pub fn to_vec6(&self) -> Vector6<f64> {
        Vector6::new(
            self.r.x(),
            self.r.y(),
            self.r.z(),
            self.v.x(),
            self.v.y(),
            self.v.z(),
        )
    }

    /// Apply an instantaneous velocity change, km/s.
    pub fn with_dv(&self, dv: &V3<Inertial>) -> Self {
        StateVector {
            epoch: self.epoch,
            r: self.r,
            v: self.v + *dv,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec6().iter().all(|x| x.is_finite())
    }
}

/// State transition matrix between two epochs, SI units (km, km/s).
#[derive(Debug, Clone, Copy)]
pub struct Stm {
    pub matrix: Matrix6<f64>,
    pub from: Epoch,
    pub to: Epoch,
}

impl Stm {
    pub fn identity(at: Epoch) -> Self {
        Stm {
            matrix: Matrix6::identity(),
            from: at,
            to: at,
        }
    }

    /// Last three columns (sensitivity to initial velocity / impulsive dv).
    pub fn dv_block(&self) -> nalgebra::SMatrix<f64, 6, 3> {
        self.matrix.fixed_view::<6, 3>(0, 3).into_owned()
    }
}

/// Cannonball SRP parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SrpConfig {
    /// Radiation pressure at the Earth-Sun distance, kN/km^2.
    pub pressure_kn_km2: f64,
    /// Radiation pressure coefficient.
    pub cr: f64,
    /// Area-to-mass ratio, m^2/kg.
    pub area_mass_m2_kg: f64,
}

impl Default for SrpConfig {
    fn default() -> Self {
        SrpConfig {
            pressure_kn_km2: SRP_PRESSURE_1AU_KN_KM2,
            cr: 1.3,
            area_mass_m2_kg: 0.01,
        }
    }
}

/// Force-model switches plus the ephemeris source.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    pub mu_moon: f64,
    pub j2: f64,
    pub r_moon_eq_km: f64,
    pub mu_earth: Option<f64>,
    pub mu_sun: Option<f64>,
    pub srp: Option<SrpConfig>,
    pub provider: Arc<EphemerisProvider>,
}

impl DynamicsModel {
    /// Reference model: lunar point mass + J2 + Earth third body.
    pub fn reference(provider: Arc<EphemerisProvider>) -> Self {
        DynamicsModel {
            mu_moon: MU_MOON,
            j2: MOON_J2,
            r_moon_eq_km: MOON_RADIUS_EQ_KM,
            mu_earth: Some(MU_EARTH),
            mu_sun: None,
            srp: None,
            provider,
        }
    }

    /// Truth model: adds the Sun third body and SRP on top of the reference
    /// force set. The provider is expected to supply Sun states.
    pub fn truth(provider: Arc<EphemerisProvider>, srp: SrpConfig) -> Self {
        DynamicsModel {
            mu_moon: MU_MOON,
            j2: MOON_J2,
            r_moon_eq_km: MOON_RADIUS_EQ_KM,
            mu_earth: Some(MU_EARTH),
            mu_sun: Some(MU_SUN),
            srp: Some(srp),
            provider,
        }
    }

    /// Two-body variant used by oracles and synthetic tests.
    pub fn two_body(provider: Arc<EphemerisProvider>) -> Self {
        DynamicsModel {
            mu_moon: MU_MOON,
            j2: 0.0,
            r_moon_eq_km: MOON_RADIUS_EQ_KM,
            mu_earth: None,
            mu_sun: None,
            srp: None,
            provider,
        }
    }

    /// Total inertial acceleration, km/s^2.
    pub fn acceleration(&self, t: Epoch, r: &V3<Inertial>) -> Result<V3<Inertial>, DynamicsError> {
        Ok(V3::from_raw(self.accel_km(t, r.raw())?))
    }

    fn accel_km(&self, t: Epoch, r: &Vector3<f64>) -> Result<Vector3<f64>, DynamicsError> {
        let rn = r.norm();
        if rn < 1e-6 {
            return Err(DynamicsError::SingularRadius { r_km: rn });
        }
        let mut a = -r * (self.mu_moon / (rn * rn * rn));
        if self.j2 > 0.0 {
            let rot = self.provider.moon_orientation(t)?;
            let r_p = rot.matrix() * r;
            let a_p = j2_accel_principal(self.mu_moon, self.j2, self.r_moon_eq_km, &r_p);
            a += rot.matrix().transpose() * a_p;
        }
        if let Some(mu_e) = self.mu_earth {
            let d = self.provider.state(Body::Earth, t)?;
            a += third_body_accel(mu_e, d.raw(), r);
        }
        if let Some(mu_s) = self.mu_sun {
            let d = self.provider.state(Body::Sun, t)?;
            a += third_body_accel(mu_s, d.raw(), r);
        }
        if let Some(srp) = &self.srp {
            let d_sun = self.provider.state(Body::Sun, t)?.into_raw();
            let d_earth = self.provider.state(Body::Earth, t)?.into_raw();
            let sun_to_sc = r - d_sun;
            let r_sun = sun_to_sc.norm();
            let ref_dist = (d_earth - d_sun).norm();
            let scale = (ref_dist / r_sun).powi(2);
            // kN/km^2 * m^2/kg = 1e-6 km/s^2
            let mag = srp.pressure_kn_km2 * scale * srp.cr * srp.area_mass_m2_kg * 1e-6;
            a += sun_to_sc * (mag / r_sun);
        }
        Ok(a)
    }

    /// Gradient of the gravitational acceleration w.r.t. position, 1/s^2.
    /// SRP is omitted: its position dependence is ~1/r_sun^2 and far below
    /// the process noise the STM feeds.
    fn gravity_gradient_km(&self, t: Epoch, r: &Vector3<f64>) -> Result<Matrix3<f64>, DynamicsError> {
        let rn = r.norm();
        if rn < 1e-6 {
            return Err(DynamicsError::SingularRadius { r_km: rn });
        }
        let mut g = point_mass_gradient(self.mu_moon, r);
        if self.j2 > 0.0 {
            let rot = self.provider.moon_orientation(t)?;
            let r_p = rot.matrix() * r;
            let g_p = j2_gradient_principal(self.mu_moon, self.j2, self.r_moon_eq_km, &r_p);
            g += rot.matrix().transpose() * g_p * rot.matrix();
        }
        if let Some(mu_e) = self.mu_earth {
            let d = self.provider.state(Body::Earth, t)?;
            g += point_mass_gradient(mu_e, &(r - d.raw()));
        }
        if let Some(mu_s) = self.mu_sun {
            let d = self.provider.state(Body::Sun, t)?;
            g += point_mass_gradient(mu_s, &(r - d.raw()));
        }
        Ok(g)
    }

    /// Propagate to `t1` (forward or backward).
    pub fn propagate(
        &self,
        cfg: &IntegratorConfig,
        state0: &StateVector,
        t1: Epoch,
    ) -> Result<StateVector, DynamicsError> {
        self.propagate_dense(cfg, state0, t1, |_, _| ControlFlow::Continue(()))
            .map(|(s, _)| s)
    }

    /// Propagate, reporting every accepted integrator step. The callback can
    /// stop the propagation early; the state reached is returned either way.
    pub fn propagate_dense(
        &self,
        cfg: &IntegratorConfig,
        state0: &StateVector,
        t1: Epoch,
        mut on_step: impl FnMut(&StateVector, &StateVector) -> ControlFlow<()>,
    ) -> Result<(StateVector, Outcome), DynamicsError> {
        let t_ref = state0.epoch;
        if t1 == t_ref {
            return Ok((*state0, Outcome::Reached));
        }
        let y0 = pack_state_canonical(&state0.to_vec6());
        let rhs = CanonicalRhs::new(self, t_ref);
        let tau_end = (t1 - t_ref) / TU_S;
        let mut f = |tau: f64, y: &SVector<f64, 6>| rhs.state_rhs(tau, y);
        let result = integrate(&mut f, 0.0, y0, tau_end, cfg, |step: Step<'_, 6>| {
            let prev = StateVector::from_vec6(
                t_ref + step.t_prev * TU_S,
                &unpack_state_canonical(step.y_prev),
            );
            let cur =
                StateVector::from_vec6(t_ref + step.t * TU_S, &unpack_state_canonical(step.y));
            on_step(&prev, &cur)
        });
        let (tau, y, outcome) = rhs.map_result(result, t_ref)?;
        Ok((
            StateVector::from_vec6(t_ref + tau * TU_S, &unpack_state_canonical(&y)),
            outcome,
        ))
    }

    /// Propagate state and state transition matrix together.
    pub fn propagate_with_stm(
        &self,
        cfg: &IntegratorConfig,
        state0: &StateVector,
        t1: Epoch,
    ) -> Result<(StateVector, Stm), DynamicsError> {
        let t_ref = state0.epoch;
        if t1 == t_ref {
            return Ok((*state0, Stm::identity(t_ref)));
        }
        let mut y0 = SVector::<f64, 42>::zeros();
        y0.fixed_rows_mut::<6>(0)
            .copy_from(&pack_state_canonical(&state0.to_vec6()));
        for i in 0..6 {
            y0[6 + 7 * i] = 1.0; // identity STM, column-major
        }
        let rhs = CanonicalRhs::new(self, t_ref);
        let tau_end = (t1 - t_ref) / TU_S;
        let mut f = |tau: f64, y: &SVector<f64, 42>| rhs.stm_rhs(tau, y);
        let result = integrate(&mut f, 0.0, y0, tau_end, cfg, |_| ControlFlow::Continue(()));
        let (tau, y, _) = rhs.map_result(result, t_ref)?;
        let state = StateVector::from_vec6(
            t_ref + tau * TU_S,
            &unpack_state_canonical(&y.fixed_rows::<6>(0).into_owned()),
        );
        let stm = Stm {
            matrix: stm_canonical_to_si(&unpack_stm(&y)),
            from: t_ref,
            to: state.epoch,
        };
        Ok((state, stm))
    }
}

/// Shared canonical-unit right-hand side with error capture: the integrator
/// sees NaNs on failure and the recorded error is surfaced afterwards.
pub(crate) struct CanonicalRhs<'a> {
    model: &'a DynamicsModel,
    t_ref_s: f64,
    error: RefCell<Option<DynamicsError>>,
}

impl<'a> CanonicalRhs<'a> {
    pub(crate) fn new(model: &'a DynamicsModel, t_ref: Epoch) -> Self {
        CanonicalRhs {
            model,
            t_ref_s: t_ref.as_secs(),
            error: RefCell::new(None),
        }
    }

    pub(crate) fn state_rhs(&self, tau: f64, y: &SVector<f64, 6>) -> SVector<f64, 6> {
        let t = Epoch::from_secs(self.t_ref_s + tau * TU_S);
        let r_km = Vector3::new(y[0], y[1], y[2]) * LU_KM;
        match self.model.accel_km(t, &r_km) {
            Ok(a) => {
                let a_c = a * (TU_S * TU_S / LU_KM);
                SVector::<f64, 6>::new(y[3], y[4], y[5], a_c.x, a_c.y, a_c.z)
            }
            Err(e) => {
                self.error.borrow_mut().get_or_insert(e);
                SVector::<f64, 6>::repeat(f64::NAN)
            }
        }
    }

    pub(crate) fn stm_rhs(&self, tau: f64, y: &SVector<f64, 42>) -> SVector<f64, 42> {
        let t = Epoch::from_secs(self.t_ref_s + tau * TU_S);
        let r_km = Vector3::new(y[0], y[1], y[2]) * LU_KM;
        let (a, g) = match (
            self.model.accel_km(t, &r_km),
            self.model.gravity_gradient_km(t, &r_km),
        ) {
            (Ok(a), Ok(g)) => (a, g),
            (Err(e), _) | (_, Err(e)) => {
                self.error.borrow_mut().get_or_insert(e);
                return SVector::<f64, 42>::repeat(f64::NAN);
            }
        };
        let a_c = a * (TU_S * TU_S / LU_KM);
        let g_c = g * (TU_S * TU_S);
        let mut dy = SVector::<f64, 42>::zeros();
        dy[0] = y[3];
        dy[1] = y[4];
        dy[2] = y[5];
        dy[3] = a_c.x;
        dy[4] = a_c.y;
        dy[5] = a_c.z;
        // dPhi = A Phi with A = [[0, I], [G, 0]]
        for col in 0..6 {
            let base = 6 + 6 * col;
            let top = Vector3::new(y[base], y[base + 1], y[base + 2]);
            let bot = Vector3::new(y[base + 3], y[base + 4], y[base + 5]);
            let dtop = bot;
            let dbot = g_c * top;
            dy[base] = dtop.x;
            dy[base + 1] = dtop.y;
            dy[base + 2] = dtop.z;
            dy[base + 3] = dbot.x;
            dy[base + 4] = dbot.y;
            dy[base + 5] = dbot.z;
        }
        dy
    }

    pub(crate) fn map_result<const N: usize>(
        &self,
        result: Result<(f64, SVector<f64, N>, Outcome), IntegrateError>,
        t_ref: Epoch,
    ) -> Result<(f64, SVector<f64, N>, Outcome), DynamicsError> {
        match result {
            Ok(ok) => Ok(ok),
            Err(e) => {
                if let Some(inner) = self.error.borrow_mut().take() {
                    return Err(inner);
                }
                Err(match e {
                    IntegrateError::StepUnderflow { t } => DynamicsError::StepUnderflow {
                        t_s: t_ref.as_secs() + t * TU_S,
                    },
                    IntegrateError::MaxStepsExceeded { t, .. } => DynamicsError::MaxStepsExceeded {
                        t_s: t_ref.as_secs() + t * TU_S,
                    },
                    IntegrateError::NonFiniteRhs { t } => DynamicsError::NonFinite {
                        t_s: t_ref.as_secs() + t * TU_S,
                    },
                })
            }
        }
    }
}

pub(crate) fn pack_state_canonical(rv_si: &Vector6<f64>) -> SVector<f64, 6> {
    SVector::<f64, 6>::new(
        rv_si[0] / LU_KM,
        rv_si[1] / LU_KM,
        rv_si[2] / LU_KM,
        rv_si[3] / VU_KM_S,
        rv_si[4] / VU_KM_S,
        rv_si[5] / VU_KM_S,
    )
}

pub(crate) fn unpack_state_canonical(y: &SVector<f64, 6>) -> Vector6<f64> {
    Vector6::new(
        y[0] * LU_KM,
        y[1] * LU_KM,
        y[2] * LU_KM,
        y[3] * VU_KM_S,
        y[4] * VU_KM_S,
        y[5] * VU_KM_S,
    )
}

fn unpack_stm(y: &SVector<f64, 42>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for col in 0..6 {
        for row in 0..6 {
            m[(row, col)] = y[6 + 6 * col + row];
        }
    }
    m
}

/// Scale a canonical STM into km / km/s units: Phi_si = S Phi_c S^-1.
pub fn stm_canonical_to_si(phi_c: &Matrix6<f64>) -> Matrix6<f64> {
    let mut m = *phi_c;
    for row in 0..6 {
        for col in 0..6 {
            let num = if row < 3 { LU_KM } else { VU_KM_S };
            let den = if col < 3 { LU_KM } else { VU_KM_S };
            m[(row, col)] *= num / den;
        }
    }
    m
}

/// Scale an SI STM into canonical units (inverse of [`stm_canonical_to_si`]).
pub fn stm_si_to_canonical(phi_si: &Matrix6<f64>) -> Matrix6<f64> {
    let mut m = *phi_si;
    for row in 0..6 {
        for col in 0..6 {
            let num = if row < 3 { LU_KM } else { VU_KM_S };
            let den = if col < 3 { LU_KM } else { VU_KM_S };
            m[(row, col)] *= den / num;
        }
    }
    m
}

/// Tidal (direct minus indirect) third-body acceleration.
pub fn third_body_accel(mu_i: f64, d_i: &Vector3<f64>, r: &Vector3<f64>) -> Vector3<f64> {
    let rel = r - d_i;
    let rel_n = rel.norm();
    let d_n = d_i.norm();
    -(rel * (mu_i / (rel_n * rel_n * rel_n)) + d_i * (mu_i / (d_n * d_n * d_n)))
}

/// J2 acceleration in principal-axes coordinates.
pub fn j2_accel_principal(mu: f64, j2: f64, r_eq: f64, r_p: &Vector3<f64>) -> Vector3<f64> {
    let rn = r_p.norm();
    let k = -1.5 * mu * j2 * r_eq * r_eq / rn.powi(5);
    let zr2 = (r_p.z / rn) * (r_p.z / rn);
    Vector3::new(
        k * (1.0 - 5.0 * zr2) * r_p.x,
        k * (1.0 - 5.0 * zr2) * r_p.y,
        k * (3.0 - 5.0 * zr2) * r_p.z,
    )
}

/// Jacobian of the point-mass acceleration -mu r / |r|^3.
pub fn point_mass_gradient(mu: f64, r: &Vector3<f64>) -> Matrix3<f64> {
    let rn = r.norm();
    let r3 = rn * rn * rn;
    let r5 = r3 * rn * rn;
    Matrix3::identity() * (-mu / r3) + r * r.transpose() * (3.0 * mu / r5)
}

/// Jacobian of [`j2_accel_principal`] w.r.t. position, principal axes.
pub fn j2_gradient_principal(mu: f64, j2: f64, r_eq: f64, r_p: &Vector3<f64>) -> Matrix3<f64> {
    let (x, y, z) = (r_p.x, r_p.y, r_p.z);
    let rn = r_p.norm();
    let k = -1.5 * mu * j2 * r_eq * r_eq;
    let r5 = rn.powi(5);
    let r7 = r5 * rn * rn;
    let r9 = r7 * rn * rn;
    let z2 = z * z;
    let daxdx = 1.0 / r5 - 5.0 * (x * x + z2) / r7 + 35.0 * x * x * z2 / r9;
    let daxdy = -5.0 * x * y / r7 + 35.0 * x * y * z2 / r9;
    let daxdz = -15.0 * x * z / r7 + 35.0 * x * z * z2 / r9;
    let daydy = 1.0 / r5 - 5.0 * (y * y + z2) / r7 + 35.0 * y * y * z2 / r9;
    let daydz = -15.0 * y * z / r7 + 35.0 * y * z * z2 / r9;
    let dazdz = 3.0 / r5 - 30.0 * z2 / r7 + 35.0 * z2 * z2 / r9;
    Matrix3::new(
        daxdx, daxdy, daxdz, //
        daxdy, daydy, daydz, //
        daxdz, daydz, dazdz,
    ) * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ephem::AnalyticParams;
    use approx::assert_relative_eq;

    fn provider() -> Arc<EphemerisProvider> {
        Arc::new(EphemerisProvider::circular(AnalyticParams::default()))
    }

    #[test]
    fn two_body_acceleration_along_x() {
        let model = DynamicsModel::two_body(provider());
        let r = V3::<Inertial>::new(8000.0, 0.0, 0.0);
        let a = model.acceleration(Epoch::from_secs(0.0), &r).unwrap();
        assert_relative_eq!(a.x(), -MU_MOON / (8000.0 * 8000.0), max_relative = 1e-14);
        assert_eq!(a.y(), 0.0);
        assert_eq!(a.z(), 0.0);
    }

    #[test]
    fn tidal_acceleration_vanishes_at_origin() {
        let d = Vector3::new(-384400.0, 0.0, 0.0);
        let a = third_body_accel(MU_EARTH, &d, &Vector3::zeros());
        assert!(a.norm() < 1e-18);
    }

    #[test]
    fn j2_on_polar_axis_matches_closed_form() {
        let r = 5000.0;
        let a = j2_accel_principal(MU_MOON, MOON_J2, MOON_RADIUS_EQ_KM, &Vector3::new(0.0, 0.0, r));
        let expect = 3.0 * MU_MOON * MOON_J2 * MOON_RADIUS_EQ_KM * MOON_RADIUS_EQ_KM / r.powi(4);
        assert_relative_eq!(a.z, expect, max_relative = 1e-13);
        assert_eq!(a.x, 0.0);
        assert_eq!(a.y, 0.0);
    }

    #[test]
    fn j2_acceleration_is_gradient_of_potential() {
        // oracle: central finite differences of the J2 force function
        // U2 = -(mu J2 R^2 / 2 r^3)(3 (z/r)^2 - 1), with a = grad U2
        let u2 = |p: &Vector3<f64>| {
            let rn = p.norm();
            -(MU_MOON * MOON_J2 * MOON_RADIUS_EQ_KM * MOON_RADIUS_EQ_KM) / (2.0 * rn.powi(3))
                * (3.0 * (p.z / rn).powi(2) - 1.0)
        };
        let p = Vector3::new(2100.0, -1500.0, 2900.0);
        let a = j2_accel_principal(MU_MOON, MOON_J2, MOON_RADIUS_EQ_KM, &p);
        let eps = 1e-3;
        for i in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[i] += eps;
            lo[i] -= eps;
            let grad = (u2(&hi) - u2(&lo)) / (2.0 * eps);
            assert_relative_eq!(a[i], grad, max_relative = 1e-7);
        }
    }

    #[test]
    fn gravity_gradient_matches_finite_differences() {
        let model = DynamicsModel::reference(provider());
        let t = Epoch::from_secs(1.0e5);
        let r0 = Vector3::new(3200.0, -1500.0, -64000.0);
        let g = model.gravity_gradient_km(t, &r0).unwrap();
        let eps = 1e-2;
        for j in 0..3 {
            let mut hi = r0;
            let mut lo = r0;
            hi[j] += eps;
            lo[j] -= eps;
            let fd = (model.accel_km(t, &hi).unwrap() - model.accel_km(t, &lo).unwrap())
                / (2.0 * eps);
            for i in 0..3 {
                assert_relative_eq!(g[(i, j)], fd[i], max_relative = 2e-6, epsilon = 1e-18);
            }
        }
    }

    #[test]
    fn j2_frame_consistency() {
        // computing J2 in the principal frame and rotating back equals
        // rotating the position first
        let model = DynamicsModel {
            mu_earth: None,
            ..DynamicsModel::reference(provider())
        };
        let t = Epoch::from_secs(7.7e5);
        let r = Vector3::new(2500.0, 1800.0, -2100.0);
        let a = model.accel_km(t, &r).unwrap();
        let rot = model.provider.moon_orientation(t).unwrap();
        let r_p = rot.matrix() * r;
        let a_p = -r_p * (MU_MOON / r.norm().powi(3))
            + j2_accel_principal(MU_MOON, MOON_J2, MOON_RADIUS_EQ_KM, &r_p);
        let a_back = rot.matrix().transpose() * a_p;
        assert_relative_eq!(a, a_back, max_relative = 1e-14);
    }

    #[test]
    fn zero_duration_propagation_is_identity() {
        let model = DynamicsModel::reference(provider());
        let s0 = StateVector::new(
            Epoch::from_secs(100.0),
            V3::new(10000.0, 2000.0, -50000.0),
            V3::new(0.1, 0.2, 0.05),
        );
        let s1 = model
            .propagate(&IntegratorConfig::default(), &s0, s0.epoch)
            .unwrap();
        assert_eq!(s1.to_vec6(), s0.to_vec6());
    }

    #[test]
    fn singular_radius_is_reported() {
        let model = DynamicsModel::two_body(provider());
        let err = model
            .acceleration(Epoch::from_secs(0.0), &V3::new(1e-9, 0.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, DynamicsError::SingularRadius { .. }));
    }

    #[test]
    fn stm_is_identity_for_zero_duration() {
        let model = DynamicsModel::reference(provider());
        let s0 = StateVector::new(
            Epoch::from_secs(0.0),
            V3::new(12000.0, 0.0, -66000.0),
            V3::new(0.0, 0.11, 0.0),
        );
        let (_, stm) = model
            .propagate_with_stm(&IntegratorConfig::default(), &s0, s0.epoch)
            .unwrap();
        assert_relative_eq!(stm.matrix, Matrix6::identity(), epsilon = 1e-14);
    }
}
