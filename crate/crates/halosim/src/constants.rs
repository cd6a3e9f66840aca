//! Physical constants and canonical units.
//!
//! All public APIs work in km, km/s and seconds; the propagator and the
//! filter covariance work in Moon-centered canonical units where the
//! gravitational parameter of the Moon is exactly one.

/// Canonical length unit, km.
pub const LU_KM: f64 = 3000.0;

/// Canonical time unit, s. Chosen so that `MU_MOON` is exactly 1 in
/// canonical units: TU = sqrt(LU^3 / mu_moon).
pub const TU_S: f64 = 2346.711856601253;

/// Canonical velocity unit, km/s.
pub const VU_KM_S: f64 = LU_KM / TU_S;

/// Gravitational parameter of the Moon, km^3/s^2. Derived from the
/// canonical unit definitions so that the canonical mu is exactly 1.
pub const MU_MOON: f64 = LU_KM * LU_KM * LU_KM / (TU_S * TU_S);

/// Gravitational parameter of the Earth, km^3/s^2.
pub const MU_EARTH: f64 = 398600.4418;

/// Gravitational parameter of the Sun, km^3/s^2.
pub const MU_SUN: f64 = 1.32712440018e11;

/// Lunar oblateness coefficient.
pub const MOON_J2: f64 = 2.0330530e-4;

/// Equatorial radius of the Moon, km.
pub const MOON_RADIUS_EQ_KM: f64 = 1738.0;

/// Mean radius of the Moon used for the spherical imaging target, km.
pub const MOON_RADIUS_MEAN_KM: f64 = 1737.4;

/// Mean Earth-Moon distance, km (semi-major axis of the analytic ephemeris).
pub const EARTH_MOON_DIST_KM: f64 = 384400.0;

/// Eccentricity of the lunar orbit used by the enriched analytic ephemeris.
pub const EARTH_MOON_ECC: f64 = 0.0549;

/// Astronomical unit, km.
pub const AU_KM: f64 = 149_597_870.7;

/// Sidereal year, s (sets the analytic Sun angular rate).
pub const SIDEREAL_YEAR_S: f64 = 365.25636 * 86400.0;

/// Solar radiation pressure at 1 AU, kN/km^2 (= 4.56e-6 N/m^2).
pub const SRP_PRESSURE_1AU_KN_KM2: f64 = 4.56e-3;

/// Days per Julian year, used for yearly delta-v normalization.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Seconds per day.
pub const SECS_PER_DAY: f64 = 86400.0;

/// Convert km to canonical length.
#[inline]
pub fn km_to_lu(x: f64) -> f64 {
    x / LU_KM
}

/// Convert canonical length to km.
#[inline]
pub fn lu_to_km(x: f64) -> f64 {
    x * LU_KM
}

/// Convert km/s to canonical velocity.
#[inline]
pub fn kms_to_vu(x: f64) -> f64 {
    x / VU_KM_S
}

/// Convert canonical velocity to km/s.
#[inline]
pub fn vu_to_kms(x: f64) -> f64 {
    x * VU_KM_S
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_mu_is_one() {
        let mu_canonical = MU_MOON * TU_S * TU_S / (LU_KM * LU_KM * LU_KM);
        assert!((mu_canonical - 1.0).abs() < 1e-15);
        // and the derived mu is the usual lunar value to within a few ppm
        assert!((MU_MOON - 4902.8).abs() < 0.01);
    }
}
