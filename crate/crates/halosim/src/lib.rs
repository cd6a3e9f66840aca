//! Closed-loop simulation of optical-navigation-based station-keeping on a
//! near-rectilinear halo orbit.
//!
//! The crate wires together five subsystems:
//!
//! * [`ephem`] / [`frames`] — analytic two-tier ephemerides (a circular
//!   generating model and an enriched truth model), Moon orientation, and
//!   frame-tagged transformations including the Earth-Moon rotating frame.
//! * [`dynamics`] / [`events`] — the perturbed Moon-centered force model,
//!   adaptive high-order propagation with state transition matrices, and
//!   trajectory event detection (perilune, true-anomaly and plane crossings).
//! * [`opnav`] — synthetic limb observations, the non-iterative horizon-based
//!   position fix, and its analytical covariance under pixel and attitude
//!   noise, with a Monte-Carlo containment validator.
//! * [`filters`] — EKF/UKF prediction and the linear position update.
//! * [`control`] — x-axis-crossing station-keeping: differential correction
//!   and minimum-norm slab projection, optional unscented mean targeting,
//!   and trigger/hysteresis logic.
//! * [`reference`] / [`harness`] — periodic reference orbit construction and
//!   the seeded Monte-Carlo campaign driver with JSON/CSV reporting.

pub mod constants;
pub mod control;
pub mod dynamics;
pub mod ephem;
pub mod epoch;
pub mod events;
pub mod frames;
pub mod harness;
pub mod integrate;
pub mod kepler;
pub mod filters;
pub mod opnav;
pub mod reference;

pub use dynamics::{DynamicsModel, StateVector, Stm};
pub use ephem::{Body, EphemerisProvider};
pub use epoch::Epoch;
pub use integrate::IntegratorConfig;
