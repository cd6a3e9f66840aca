//! Reference frames and frame-tagged linear algebra.
//!
//! Every vector carries its frame as a type parameter, so cross-frame
//! arithmetic without an explicit transformation is rejected at compile
//! time. Four frames are used:
//!
//! * [`Inertial`] — Moon-centered inertial; the analytic ephemeris places
//!   the Earth-Moon orbit in its xy-plane.
//! * [`EmRot`] — Earth-Moon rotating frame centered at the Moon, x toward
//!   the Moon from the Earth (i.e. away from the Earth), z along the
//!   Earth-Moon orbital angular momentum, y completing the triad.
//! * [`MoonPa`] — the Moon's principal axes frame.
//! * [`Cam`] — camera frame, +z along the boresight.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use std::marker::PhantomData;
use std::ops::{Add, Mul, Neg, Sub};

pub trait Frame: Copy + Clone + std::fmt::Debug + 'static {
    const NAME: &'static str;
}

/// Moon-centered inertial frame.
#[derive(Debug, Clone, Copy)]
pub struct Inertial;
/// Earth-Moon rotating frame, Moon-centered, x̂ from Earth toward Moon.
#[derive(Debug, Clone, Copy)]
pub struct EmRot;
/// Moon principal axes frame.
#[derive(Debug, Clone, Copy)]
pub struct MoonPa;
/// Camera frame, boresight along +z.
#[derive(Debug, Clone, Copy)]
pub struct Cam;

impl Frame for Inertial {
    const NAME: &'static str = "I";
}
impl Frame for EmRot {
    const NAME: &'static str = "EM";
}
impl Frame for MoonPa {
    const NAME: &'static str = "P";
}
impl Frame for Cam {
    const NAME: &'static str = "C";
}

/// A 3-vector tagged with the frame its components are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V3<F: Frame> {
    inner: Vector3<f64>,
    _frame: PhantomData<F>,
}

impl<F: Frame> V3<F> {
    #[inline]
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::from_raw(Vector3::new(x, y, z))
    }

    #[inline]
    pub fn from_raw(v: Vector3<f64>) -> Self {
        V3 {
            inner: v,
            _frame: PhantomData,
        }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::from_raw(Vector3::zeros())
    }

    #[inline]
    pub fn raw(&self) -> &Vector3<f64> {
        &self.inner
    }

    #[inline]
    pub fn into_raw(self) -> Vector3<f64> {
        self.inner
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.inner.x
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.inner.y
    }
    #[inline]
    pub fn z(&self) -> f64 {
        self.inner.z
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.inner.norm()
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        self.inner.dot(&other.inner)
    }

    #[inline]
    pub fn cross(&self, other: &Self) -> Self {
        Self::from_raw(self.inner.cross(&other.inner))
    }

    #[inline]
    pub fn normalize(&self) -> Self {
        Self::from_raw(self.inner.normalize())
    }
}

impl<F: Frame> Add for V3<F> {
    type Output = V3<F>;
    fn add(self, rhs: Self) -> Self {
        Self::from_raw(self.inner + rhs.inner)
    }
}

impl<F: Frame> Sub for V3<F> {
    type Output = V3<F>;
    fn sub(self, rhs: Self) -> Self {
        Self::from_raw(self.inner - rhs.inner)
    }
}

impl<F: Frame> Neg for V3<F> {
    type Output = V3<F>;
    fn neg(self) -> Self {
        Self::from_raw(-self.inner)
    }
}

impl<F: Frame> Mul<f64> for V3<F> {
    type Output = V3<F>;
    fn mul(self, s: f64) -> Self {
        Self::from_raw(self.inner * s)
    }
}

/// Proper rotation taking components expressed in frame `From` to
/// components expressed in frame `To`: `v_To = R * v_From`.
#[derive(Debug, Clone, Copy)]
pub struct Rot<From: Frame, To: Frame> {
    m: Matrix3<f64>,
    _from: PhantomData<From>,
    _to: PhantomData<To>,
}

impl<From: Frame, To: Frame> Rot<From, To> {
    /// Wrap a matrix without checking orthonormality. Callers constructing
    /// rotations from raw data should verify with [`Rot::orthonormality_defect`].
    #[inline]
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rot {
            m,
            _from: PhantomData,
            _to: PhantomData,
        }
    }

    pub fn identity() -> Self {
        Self::from_matrix_unchecked(Matrix3::identity())
    }

    /// Rodrigues rotation about `axis` (need not be normalized) by `angle` rad.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let u = axis.normalize();
        let (s, c) = angle.sin_cos();
        let ux = skew(&u);
        let m = Matrix3::identity() * c + ux * s + u * u.transpose() * (1.0 - c);
        Self::from_matrix_unchecked(m)
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    #[inline]
    pub fn apply(&self, v: &V3<From>) -> V3<To> {
        V3::from_raw(self.m * v.raw())
    }

    #[inline]
    pub fn inverse(&self) -> Rot<To, From> {
        Rot::from_matrix_unchecked(self.m.transpose())
    }

    /// max(|RᵀR − I|, |det R − 1|); ~1e-15 for a clean rotation.
    pub fn orthonormality_defect(&self) -> f64 {
        let d = (self.m.transpose() * self.m - Matrix3::identity()).abs().max();
        d.max((self.m.determinant() - 1.0).abs())
    }
}

/// Composition: `(b_to_c * a_to_b)` maps A directly to C.
impl<A: Frame, B: Frame, C: Frame> Mul<Rot<A, B>> for Rot<B, C> {
    type Output = Rot<A, C>;
    fn mul(self, rhs: Rot<A, B>) -> Rot<A, C> {
        Rot::from_matrix_unchecked(self.m * rhs.m)
    }
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
#[inline]
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rigid state transformation between a pair of frames sharing an origin,
/// including the transport term for a rotating target frame:
///
/// r_To = R r_From,  v_To = R v_From − ω × (R r_From)
///
/// where ω is the target frame's angular velocity expressed in the target
/// frame. As a 6×6 matrix the diagonal blocks are R, the lower-left block
/// is −[ω×]R and the upper-right block is zero.
#[derive(Debug, Clone, Copy)]
pub struct StateMap<From: Frame, To: Frame> {
    pub rot: Rot<From, To>,
    /// Angular velocity of the target frame w.r.t. the source frame,
    /// expressed in the target frame, rad/s.
    pub omega_to: Vector3<f64>,
}

impl<From: Frame, To: Frame> StateMap<From, To> {
    pub fn new(rot: Rot<From, To>, omega_to: Vector3<f64>) -> Self {
        StateMap { rot, omega_to }
    }

    #[inline]
    pub fn apply(&self, r: &V3<From>, v: &V3<From>) -> (V3<To>, V3<To>) {
        let r_to = self.rot.apply(r);
        let v_to = V3::from_raw(self.rot.matrix() * v.raw() - self.omega_to.cross(r_to.raw()));
        (r_to, v_to)
    }

    pub fn inverse(&self) -> StateMap<To, From> {
        let rot_inv = self.rot.inverse();
        let omega_from = -(rot_inv.matrix() * self.omega_to);
        StateMap {
            rot: rot_inv,
            omega_to: omega_from,
        }
    }

    /// Dense 6×6 representation (for Jacobian algebra).
    pub fn matrix6(&self) -> Matrix6<f64> {
        let r = self.rot.matrix();
        let lower_left = -skew(&self.omega_to) * r;
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&lower_left);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        m
    }

    pub fn apply_vec6(&self, rv: &Vector6<f64>) -> Vector6<f64> {
        let r = V3::<From>::new(rv[0], rv[1], rv[2]);
        let v = V3::<From>::new(rv[3], rv[4], rv[5]);
        let (rt, vt) = self.apply(&r, &v);
        Vector6::new(rt.x(), rt.y(), rt.z(), vt.x(), vt.y(), vt.z())
    }
}
