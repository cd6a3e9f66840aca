//! Horizon-based optical navigation.
//!
//! A parametric limb synthesizer stands in for the rendering/edge-detection
//! chain: it places points exactly on the projected limb conic of the target
//! ellipsoid and perturbs them with Gaussian pixel noise, which is the same
//! fidelity knob the covariance validation uses. The position solver is the
//! non-iterative horizon fix: limb directions are mapped into a space where
//! the body is the unit sphere, a linear least-squares problem gives the
//! cone apex direction, and the position follows in closed form. The
//! analytical measurement covariance accounts for both limb-pixel noise and
//! camera attitude error.
//!
//! Attitude convention: one rotation `pa_from_cam` maps camera-frame
//! components into principal-axes components. The noise-free
//! synthesize/solve roundtrip test is the arbiter of that convention.

use crate::frames::{Cam, MoonPa, Rot, V3};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod validate;

#[derive(Debug, Error)]
pub enum OpnavError {
    #[error("target limb does not fit the sensor frame")]
    BodyNotInFrame,
    #[error("camera is inside or on the target body (range {range_km} km)")]
    RangeTooClose { range_km: f64 },
    #[error("limb geometry is rank deficient (m = {m})")]
    RankDeficient { m: usize },
    #[error("solution places the camera inside the body (n'n = {nn})")]
    NotOutsideBody { nn: f64 },
}

/// Pinhole camera with a square pixel grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub focal_mm: f64,
    pub sensor_w_mm: f64,
    pub sensor_h_mm: f64,
    pub pixels_u: u32,
    pub pixels_v: u32,
    /// Standard deviation of a detected limb point, pixels.
    pub sigma_pix: f64,
    /// Camera attitude knowledge error (1-sigma rotation angle), radians.
    pub sigma_attitude_rad: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        // the pipeline camera: f = 360 mm on a 100 mm square sensor
        CameraModel::new(360.0, 100.0, 1024, 0.5, 15.0)
    }
}

impl CameraModel {
    /// Square-sensor constructor; attitude noise is given in arcseconds.
    pub fn new(
        focal_mm: f64,
        sensor_mm: f64,
        pixels: u32,
        sigma_pix: f64,
        sigma_attitude_arcsec: f64,
    ) -> Self {
        CameraModel {
            focal_mm,
            sensor_w_mm: sensor_mm,
            sensor_h_mm: sensor_mm,
            pixels_u: pixels,
            pixels_v: pixels,
            sigma_pix,
            sigma_attitude_rad: sigma_attitude_arcsec * std::f64::consts::PI / (180.0 * 3600.0),
        }
    }

    /// Full field of view across the sensor width, degrees.
    pub fn fov_deg(&self) -> f64 {
        fov_from_focal_length(self.focal_mm, self.sensor_w_mm)
    }

    /// Pixel pitch in pixels per radian of boresight-normal direction.
    pub fn dx_pixels_per_radian(&self) -> f64 {
        self.focal_mm * self.pixels_u as f64 / self.sensor_w_mm
    }

    /// Intrinsic calibration matrix: image-plane direction (x/z, y/z, 1) to
    /// homogeneous pixel coordinates.
    pub fn kappa(&self) -> Matrix3<f64> {
        let du = self.focal_mm * self.pixels_u as f64 / self.sensor_w_mm;
        let dv = self.focal_mm * self.pixels_v as f64 / self.sensor_h_mm;
        Matrix3::new(
            du,
            0.0,
            self.pixels_u as f64 / 2.0,
            0.0,
            dv,
            self.pixels_v as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }

    fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.pixels_u as f64 && v >= 0.0 && v <= self.pixels_v as f64
    }
}

/// Field of view of a focal length / sensor width pair, degrees.
pub fn fov_from_focal_length(focal_mm: f64, sensor_w_mm: f64) -> f64 {
    assert!(focal_mm > 0.0, "focal length must be positive");
    2.0 * (sensor_w_mm / (2.0 * focal_mm)).atan().to_degrees()
}

/// Triaxial target body.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BodyShape {
    pub a_km: f64,
    pub b_km: f64,
    pub c_km: f64,
}

impl BodyShape {
    pub fn sphere(radius_km: f64) -> Self {
        BodyShape {
            a_km: radius_km,
            b_km: radius_km,
            c_km: radius_km,
        }
    }

    pub fn moon() -> Self {
        Self::sphere(crate::constants::MOON_RADIUS_MEAN_KM)
    }

    pub fn max_radius(&self) -> f64 {
        self.a_km.max(self.b_km).max(self.c_km)
    }

    /// diag(1/a, 1/b, 1/c): principal-axes coordinates to the space where
    /// the body is the unit sphere.
    pub fn q(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            1.0 / self.a_km,
            1.0 / self.b_km,
            1.0 / self.c_km,
        ))
    }

    pub fn q_inv(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.a_km, self.b_km, self.c_km))
    }
}

/// Pixel coordinates of detected limb points with the attitude they will be
/// solved under.
#[derive(Debug, Clone)]
pub struct LimbObservation {
    pub pixels: Vec<(f64, f64)>,
    /// Believed camera-to-principal-axes rotation.
    pub pa_from_cam: Rot<Cam, MoonPa>,
}

impl LimbObservation {
    pub fn m(&self) -> usize {
        self.pixels.len()
    }
}

/// Horizon-based position fix with covariance, principal-axes frame.
#[derive(Debug, Clone)]
pub struct PositionMeasurement {
    pub r_p_km: V3<MoonPa>,
    pub cov_p_km2: Matrix3<f64>,
    pub m: usize,
}

/// Byproducts of the position solve needed by the covariance evaluation.
#[derive(Debug, Clone)]
pub struct SolveInfo {
    pub r_p_km: V3<MoonPa>,
    pub r_c_km: V3<Cam>,
    pub n: Vector3<f64>,
}

/// Generate noisy limb pixels for the true geometry.
///
/// * `attitude` — the camera's true camera-to-principal-axes rotation.
/// * `r_c_km` — true spacecraft position relative to the body center,
///   camera frame (boresight +z, so an on-boresight target sits at
///   `(0, 0, -range)`).
/// * `sun_dir_c` — unit direction from the body toward the Sun, camera
///   frame; the lit sector of the limb is centered on the limb azimuth
///   nearest the Sun's projection (azimuth 0 if the Sun projects onto the
///   boresight).
///
/// Points are spaced at equal angle intervals over `sector_deg` of the limb
/// circle in the unit-sphere space, perturbed per-coordinate with
/// `N(0, sigma_pix)`. Noisy points falling off the sensor are dropped, so
/// fewer than `m_requested` points may come back. If the noise-free limb
/// ring does not fit the frame the whole observation fails.
pub fn synthesize_limb_points(
    camera: &CameraModel,
    shape: &BodyShape,
    attitude: &Rot<Cam, MoonPa>,
    r_c_km: &V3<Cam>,
    sun_dir_c: &V3<Cam>,
    sector_deg: f64,
    m_requested: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(f64, f64)>, OpnavError> {
    let range = r_c_km.norm();
    if range <= shape.max_radius() {
        return Err(OpnavError::RangeTooClose { range_km: range });
    }
    let q = shape.q();
    let r_p = attitude.apply(r_c_km);
    let r_bar = q * r_p.raw();
    let rho2 = r_bar.norm_squared();
    if rho2 <= 1.0 {
        return Err(OpnavError::RangeTooClose { range_km: range });
    }
    // limb circle of the unit sphere seen from r_bar
    let center = r_bar / rho2;
    let radius = (1.0 - 1.0 / rho2).sqrt();
    let r_hat = r_bar.normalize();
    let helper = if r_hat.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = (helper - r_hat * helper.dot(&r_hat)).normalize();
    let e2 = r_hat.cross(&e1);

    // lit-sector center: limb azimuth closest to the Sun direction
    let q_sun = q * attitude.apply(sun_dir_c).raw();
    let psi_center = {
        let s1 = q_sun.dot(&e1);
        let s2 = q_sun.dot(&e2);
        if s1.hypot(s2) < 1e-12 {
            0.0
        } else {
            s2.atan2(s1)
        }
    };

    let kappa = camera.kappa();
    let cam_from_pa = attitude.inverse();
    let project = |psi: f64| -> Result<(f64, f64), OpnavError> {
        let x_bar = center + (e1 * psi.cos() + e2 * psi.sin()) * radius;
        let limb_p = shape.q_inv() * x_bar; // principal-axes limb point, km
        let los_p = V3::<MoonPa>::from_raw(limb_p - r_p.raw());
        let los_c = cam_from_pa.apply(&los_p);
        if los_c.z() <= 0.0 {
            return Err(OpnavError::BodyNotInFrame);
        }
        let s = Vector3::new(los_c.x() / los_c.z(), los_c.y() / los_c.z(), 1.0);
        let px = kappa * s;
        Ok((px.x, px.y))
    };

    // the full noise-free ring must fit the frame
    let ring_check = m_requested.max(64);
    for k in 0..ring_check {
        let psi = std::f64::consts::TAU * k as f64 / ring_check as f64;
        let (u, v) = project(psi)?;
        if !camera.in_bounds(u, v) {
            return Err(OpnavError::BodyNotInFrame);
        }
    }

    let noise = Normal::new(0.0, camera.sigma_pix.max(0.0)).unwrap();
    let sector = sector_deg.to_radians();
    let full_circle = sector_deg >= 360.0;
    let mut pixels = Vec::with_capacity(m_requested);
    for k in 0..m_requested {
        // a full circle closes on itself, so it is spaced without the
        // duplicated endpoint an open arc carries
        let frac = if m_requested == 1 {
            0.5
        } else if full_circle {
            k as f64 / m_requested as f64
        } else {
            k as f64 / (m_requested - 1) as f64
        };
        let psi = psi_center - sector / 2.0 + sector * frac;
        let (mut u, mut v) = project(psi)?;
        if camera.sigma_pix > 0.0 {
            u += noise.sample(rng);
            v += noise.sample(rng);
        }
        if camera.in_bounds(u, v) {
            pixels.push((u, v));
        }
    }
    Ok(pixels)
}

/// Number of limb points a detector would return for the given apparent
/// geometry: a fixed density of points per pixel of lit limb arc, clamped.
pub fn flight_limb_count(
    camera: &CameraModel,
    shape: &BodyShape,
    range_km: f64,
    sector_deg: f64,
    density_per_pixel: f64,
    m_min: usize,
    m_max: usize,
) -> usize {
    let apparent_diameter_rad = 2.0 * (shape.max_radius() / range_km).min(1.0).asin();
    let d_pix = apparent_diameter_rad * camera.dx_pixels_per_radian();
    let arc_pixels = (sector_deg / 360.0) * std::f64::consts::PI * d_pix;
    ((density_per_pixel * arc_pixels).round() as usize).clamp(m_min, m_max)
}

/// Solve the horizon fix for the spacecraft position in the principal-axes
/// frame. `attitude` is the believed camera orientation.
pub fn solve_position(
    camera: &CameraModel,
    shape: &BodyShape,
    attitude: &Rot<Cam, MoonPa>,
    obs: &LimbObservation,
) -> Result<SolveInfo, OpnavError> {
    let m = obs.pixels.len();
    if m < 3 {
        return Err(OpnavError::RankDeficient { m });
    }
    let kappa_inv = camera
        .kappa()
        .try_inverse()
        .expect("calibration matrix is invertible by construction");
    let q = shape.q();
    let mut h = DMatrix::<f64>::zeros(m, 3);
    for (i, &(u, v)) in obs.pixels.iter().enumerate() {
        let s_c = kappa_inv * Vector3::new(u, v, 1.0);
        let s_bar = q * attitude.apply(&V3::<Cam>::from_raw(s_c)).raw();
        let s_bar_unit = s_bar.normalize();
        h.set_row(i, &s_bar_unit.transpose());
    }
    let svd = h.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin < 1e-10 * smax {
        return Err(OpnavError::RankDeficient { m });
    }
    let n_dyn = svd
        .solve(&DVector::from_element(m, 1.0), 0.0)
        .map_err(|_| OpnavError::RankDeficient { m })?;
    let n = Vector3::new(n_dyn[0], n_dyn[1], n_dyn[2]);
    let nn = n.norm_squared();
    if nn <= 1.0 {
        return Err(OpnavError::NotOutsideBody { nn });
    }
    let r_p = V3::<MoonPa>::from_raw(shape.q_inv() * n * (-(nn - 1.0).powf(-0.5)));
    let r_c = attitude.inverse().apply(&r_p);
    Ok(SolveInfo {
        r_p_km: r_p,
        r_c_km: r_c,
        n,
    })
}

/// Analytical covariance of the horizon fix in the principal-axes frame,
/// combining the limb-noise term and the attitude-error term.
pub fn measurement_covariance(
    camera: &CameraModel,
    shape: &BodyShape,
    attitude: &Rot<Cam, MoonPa>,
    obs: &LimbObservation,
    info: &SolveInfo,
) -> Result<Matrix3<f64>, OpnavError> {
    let m = obs.pixels.len();
    let n = info.n;
    let nn = n.norm_squared();
    if nn <= 1.0 {
        return Err(OpnavError::NotOutsideBody { nn });
    }
    let q = shape.q();
    let q_inv = shape.q_inv();
    let kappa_inv = camera
        .kappa()
        .try_inverse()
        .expect("calibration matrix is invertible by construction");

    // sensitivity of the position to the cone-apex solution
    let f_mat =
        -(nn - 1.0).powf(-0.5) * q_inv * (Matrix3::identity() - n * n.transpose() / (nn - 1.0));
    // sensitivity to small attitude errors
    let g_mat = attitude.matrix() * crate::frames::skew(info.r_c_km.raw());

    // weighted information matrix of the least-squares residuals
    let qm = q * attitude.matrix();
    let sigma_s = camera.sigma_pix / camera.dx_pixels_per_radian();
    let r_s = Matrix3::from_diagonal(&Vector3::new(
        sigma_s * sigma_s,
        sigma_s * sigma_s,
        0.0,
    ));
    let mid = qm * r_s * qm.transpose();
    let mut info_mat = Matrix3::zeros();
    for &(u, v) in &obs.pixels {
        let s_c = kappa_inv * Vector3::new(u, v, 1.0);
        let s_bar = qm * s_c;
        let s_norm = s_bar.norm();
        let s_unit = s_bar / s_norm;
        let j_i =
            (n.transpose() * (Matrix3::identity() - s_unit * s_unit.transpose())) / s_norm;
        let var_yi = (j_i * mid * j_i.transpose())[(0, 0)];
        if var_yi <= 0.0 {
            return Err(OpnavError::RankDeficient { m });
        }
        info_mat += s_unit * s_unit.transpose() / var_yi;
    }
    let p_n = info_mat
        .try_inverse()
        .ok_or(OpnavError::RankDeficient { m })?;

    let sigma_phi2 = camera.sigma_attitude_rad * camera.sigma_attitude_rad;
    let cov = f_mat * p_n * f_mat.transpose() + g_mat * (sigma_phi2 * g_mat.transpose());
    Ok(0.5 * (cov + cov.transpose()))
}

/// Solve and attach the covariance in one call.
pub fn measure(
    camera: &CameraModel,
    shape: &BodyShape,
    attitude: &Rot<Cam, MoonPa>,
    obs: &LimbObservation,
) -> Result<PositionMeasurement, OpnavError> {
    let info = solve_position(camera, shape, attitude, obs)?;
    let cov = measurement_covariance(camera, shape, attitude, obs, &info)?;
    Ok(PositionMeasurement {
        r_p_km: info.r_p_km,
        cov_p_km2: cov,
        m: obs.m(),
    })
}

/// Uniformly random proper rotation (camera to principal axes).
pub fn random_attitude(rng: &mut impl Rng) -> Rot<Cam, MoonPa> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let q = nalgebra::Quaternion::new(
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        );
        if q.norm() > 1e-6 {
            let uq = nalgebra::UnitQuaternion::from_quaternion(q);
            return Rot::from_matrix_unchecked(uq.to_rotation_matrix().into_inner());
        }
    }
}

/// Attitude perturbation via Rodrigues' formula about a random axis. The
/// rotation vector is drawn with i.i.d. `N(0, sigma_phi)` components, so its
/// covariance is `sigma_phi^2 I3` — the statistics the analytical attitude
/// term models.
pub fn sample_attitude_perturbation(
    sigma_phi_rad: f64,
    rng: &mut impl Rng,
) -> Matrix3<f64> {
    if sigma_phi_rad <= 0.0 {
        return Matrix3::identity();
    }
    let normal = Normal::new(0.0, sigma_phi_rad).unwrap();
    let rotvec = Vector3::new(
        normal.sample(rng),
        normal.sample(rng),
        normal.sample(rng),
    );
    let dphi = rotvec.norm();
    if dphi < 1e-18 {
        return Matrix3::identity();
    }
    let axis = rotvec / dphi;
    let (s, c) = dphi.sin_cos();
    Matrix3::identity() * c + crate::frames::skew(&axis) * s + axis * axis.transpose() * (1.0 - c)
}

/// Project a Sun direction expressed in the camera frame from a Sun position
/// and spacecraft position in the principal-axes frame.
pub fn sun_direction_in_camera(
    attitude: &Rot<Cam, MoonPa>,
    sun_from_body_p: &V3<MoonPa>,
) -> V3<Cam> {
    attitude.inverse().apply(&sun_from_body_p.normalize())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn mahalanobis2(
    err: &Vector3<f64>,
    cov: &Matrix3<f64>,
) -> Option<f64> {
    let chol = cov.cholesky()?;
    let w = chol.solve(err);
    Some(err.dot(&w))
}

#[derive(Debug, Clone, Copy)]
pub struct ContainmentFractions {
    pub one_sigma: f64,
    pub two_sigma: f64,
    pub three_sigma: f64,
}

impl ContainmentFractions {
    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.one_sigma, self.two_sigma, self.three_sigma)
    }
}
