//! Osculating two-body geometry about the Moon.

use crate::constants::MU_MOON;
use crate::dynamics::StateVector;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("degenerate orbit geometry: |r x v| = {0:e} km^2/s")]
    DegenerateOrbit(f64),
}

/// Angular momentum floor below which the osculating plane is undefined.
const H_MIN_KM2_S: f64 = 1e-8;

/// Eccentricity below which the orbit is treated as circular and the
/// anomaly is measured from the node of the position vector instead of
/// the (numerically meaningless) eccentricity vector.
const ECC_MIN: f64 = 1e-9;

/// Osculating true anomaly of a Moon-centered state, degrees in [0, 360).
/// Zero at perilune and increasing along the motion.
pub fn osculating_true_anomaly(state: &StateVector) -> Result<f64, AnomalyError> {
    osculating_true_anomaly_rv(state.r.raw(), state.v.raw(), MU_MOON)
}

pub fn osculating_true_anomaly_rv(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    mu: f64,
) -> Result<f64, AnomalyError> {
    let h = r.cross(v);
    if h.norm() < H_MIN_KM2_S {
        return Err(AnomalyError::DegenerateOrbit(h.norm()));
    }
    let h_hat = h.normalize();
    let r_hat = r.normalize();
    let e_vec = v.cross(&h) / mu - r_hat;
    let axis = if e_vec.norm() > ECC_MIN {
        e_vec.normalize()
    } else {
        // circular: measure from the ascending node of the osculating plane,
        // falling back to +x for equatorial geometry
        let node = Vector3::z().cross(&h_hat);
        if node.norm() > 1e-12 {
            node.normalize()
        } else {
            Vector3::x()
        }
    };
    let cos_ta = axis.dot(&r_hat).clamp(-1.0, 1.0);
    let sin_ta = axis.cross(&r_hat).dot(&h_hat);
    let ta = sin_ta.atan2(cos_ta).to_degrees();
    Ok(ta.rem_euclid(360.0))
}

/// Wrap an angle difference to (-180, 180] degrees.
pub fn wrap_angle_deg(x: f64) -> f64 {
    let mut w = x.rem_euclid(360.0);
    if w > 180.0 {
        w -= 360.0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn circular_state_along_x_is_perilune() {
        let r = Vector3::new(8000.0, 0.0, 0.0);
        let v_circ = (MU_MOON / 8000.0_f64).sqrt();
        let v = Vector3::new(0.0, v_circ, 0.0);
        let ta = osculating_true_anomaly_rv(&r, &v, MU_MOON).unwrap();
        assert_relative_eq!(ta, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ascending_descending_halves() {
        // elliptic orbit: outbound state has r.v > 0 and TA in (0, 180)
        let r = Vector3::new(9000.0, 3000.0, 0.0);
        let v = Vector3::new(-0.1, 0.75, 0.0);
        let ta = osculating_true_anomaly_rv(&r, &v, MU_MOON).unwrap();
        let rv = r.dot(&v);
        if rv > 0.0 {
            assert!(ta > 0.0 && ta < 180.0, "ta = {ta}, r.v = {rv}");
        } else {
            assert!(ta > 180.0 && ta < 360.0, "ta = {ta}, r.v = {rv}");
        }
    }

    #[test]
    fn zero_angular_momentum_is_degenerate() {
        let r = Vector3::new(5000.0, 0.0, 0.0);
        let v = Vector3::new(0.5, 0.0, 0.0); // purely radial
        assert!(osculating_true_anomaly_rv(&r, &v, MU_MOON).is_err());
    }

    #[test]
    fn wrap_angle() {
        assert_relative_eq!(wrap_angle_deg(350.0), -10.0);
        assert_relative_eq!(wrap_angle_deg(-350.0), 10.0);
        assert_relative_eq!(wrap_angle_deg(180.0), 180.0);
        assert_relative_eq!(wrap_angle_deg(540.0), 180.0);
    }
}
