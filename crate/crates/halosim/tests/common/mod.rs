//! Shared test oracles, independent of the library's implementation paths.
#![allow(dead_code)]

use halosim::dynamics::DynamicsModel;
use halosim::ephem::{AnalyticParams, EphemerisProvider};
use halosim::integrate::IntegratorConfig;
use halosim::reference::{build_reference, ReferenceOrbit};
use nalgebra::Vector3;
use std::sync::{Arc, OnceLock};

/// Closed-form elliptic two-body propagation. Elements are extracted from
/// the state, the mean anomaly is advanced, and Kepler's equation is solved
/// by bisection, so no library propagation code is involved.
pub fn kepler_propagate(
    mu: f64,
    r0: &Vector3<f64>,
    v0: &Vector3<f64>,
    dt: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let h = r0.cross(v0);
    let rn = r0.norm();
    let e_vec = v0.cross(&h) / mu - r0 / rn;
    let e = e_vec.norm();
    let energy = v0.norm_squared() / 2.0 - mu / rn;
    let a = -mu / (2.0 * energy);
    assert!(a > 0.0 && e < 1.0, "oracle handles elliptic orbits only");
    let n = (mu / (a * a * a)).sqrt();

    let w_hat = h.normalize();
    let p_hat = if e > 1e-12 {
        e_vec / e
    } else {
        r0 / rn
    };
    let q_hat = w_hat.cross(&p_hat);

    let cos_nu0 = p_hat.dot(&(r0 / rn)).clamp(-1.0, 1.0);
    let sin_nu0 = q_hat.dot(&(r0 / rn));
    let nu0 = sin_nu0.atan2(cos_nu0);
    let e0 = 2.0 * ((1.0 - e).sqrt() * (nu0 / 2.0).tan()).atan2((1.0 + e).sqrt());
    let m0 = e0 - e * e0.sin();
    let m = m0 + n * dt;

    let ea = solve_kepler_bisect(m, e);
    let (s, c) = ea.sin_cos();
    let b_over_a = (1.0 - e * e).sqrt();
    let r_mag = a * (1.0 - e * c);
    let pos = p_hat * (a * (c - e)) + q_hat * (a * b_over_a * s);
    let vel = (p_hat * (-s) + q_hat * (b_over_a * c)) * ((mu * a).sqrt() / r_mag);
    (pos, vel)
}

pub fn kepler_period(mu: f64, a: f64) -> f64 {
    std::f64::consts::TAU * (a * a * a / mu).sqrt()
}

/// Bisection solve of E - e sinE = M on a bracketing interval.
fn solve_kepler_bisect(m: f64, e: f64) -> f64 {
    let m_wrapped = m.rem_euclid(std::f64::consts::TAU);
    let offset = m - m_wrapped;
    let (mut lo, mut hi) = (m_wrapped - 1.0, m_wrapped + 1.0);
    let f = |x: f64| x - e * x.sin() - m_wrapped;
    while f(lo) > 0.0 {
        lo -= 1.0;
    }
    while f(hi) < 0.0 {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi) + offset
}

pub fn circular_provider() -> Arc<EphemerisProvider> {
    Arc::new(EphemerisProvider::circular(AnalyticParams::default()))
}

pub fn circular_model() -> DynamicsModel {
    DynamicsModel::reference(circular_provider())
}

/// The corrected baseline, built once per test binary.
pub fn shared_reference() -> &'static ReferenceOrbit {
    static REF: OnceLock<ReferenceOrbit> = OnceLock::new();
    REF.get_or_init(|| {
        build_reference(&circular_model(), &IntegratorConfig::default(), 75)
            .expect("reference correction converges")
    })
}
