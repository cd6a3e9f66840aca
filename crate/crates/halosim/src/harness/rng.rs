//! Hierarchical deterministic random streams: one root seed fans out into
//! independent per-run, per-subsystem substreams, so identical roots give
//! bit-identical campaigns regardless of worker scheduling.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    InitState = 1,
    SrpParams = 2,
    Measurement = 3,
    Attitude = 4,
    OdNoise = 5,
    Execution = 6,
}

#[derive(Debug, Clone, Copy)]
pub struct RandomStream {
    pub root: u64,
}

impl RandomStream {
    pub fn new(root: u64) -> Self {
        RandomStream { root }
    }

    pub fn substream(&self, run: usize, sub: Subsystem) -> ChaCha12Rng {
        let stream_id = (run as u64) << 8 | sub as u64;
        ChaCha12Rng::seed_from_u64(crate::opnav::validate::mix_seed(self.root, stream_id))
    }
}

/// Isotropic Gaussian error vector whose norm has RMS `three_sigma / 3`:
/// per-axis sigma is `three_sigma / (3 sqrt(3))`.
pub fn sample_error_vector(three_sigma: f64, rng: &mut impl Rng) -> Vector3<f64> {
    if three_sigma <= 0.0 {
        return Vector3::zeros();
    }
    let per_axis = three_sigma / 3.0 / 3.0_f64.sqrt();
    let normal = Normal::new(0.0, per_axis).unwrap();
    Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
}

/// Per-axis sigma matching [`sample_error_vector`], for seeding covariances.
pub fn per_axis_sigma(three_sigma: f64) -> f64 {
    three_sigma / 3.0 / 3.0_f64.sqrt()
}

/// Corrupt a commanded maneuver with relative-magnitude and pointing error.
pub fn corrupt_maneuver(
    dv: &Vector3<f64>,
    mag_rel_3sigma: f64,
    dir_3sigma_deg: f64,
    rng: &mut impl Rng,
) -> Vector3<f64> {
    if dv.norm() == 0.0 {
        return *dv;
    }
    let mag_factor = if mag_rel_3sigma > 0.0 {
        1.0 + Normal::new(0.0, mag_rel_3sigma / 3.0).unwrap().sample(rng)
    } else {
        1.0
    };
    let mut out = dv * mag_factor;
    if dir_3sigma_deg > 0.0 {
        let tilt = Normal::new(0.0, (dir_3sigma_deg / 3.0).to_radians())
            .unwrap()
            .sample(rng);
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        let u_hat = dv.normalize();
        let helper = if u_hat.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = (helper - u_hat * helper.dot(&u_hat)).normalize();
        let e2 = u_hat.cross(&e1);
        let axis = e1 * azimuth.cos() + e2 * azimuth.sin();
        let rot = crate::frames::Rot::<crate::frames::Inertial, crate::frames::Inertial>::from_axis_angle(&axis, tilt);
        out = rot.matrix() * out;
    }
    out
}
