//! Closed-form projection of a point onto the intersection of two
//! half-spaces {y : xi1'y <= eta1} and {y : xi2'y <= eta2}.
//!
//! Exactly one of four cases applies: already feasible, one of the two
//! hyperplanes active, or both active. The minimum-norm maneuver of the
//! linearized targeting slab is the projection of the origin.

use nalgebra::Vector3;

/// Multipliers (nu1, nu2) such that the projection is
/// `y - nu1 * xi1 - nu2 * xi2`.
pub fn projection_coefficients(
    y: &Vector3<f64>,
    xi1: &Vector3<f64>,
    eta1: f64,
    xi2: &Vector3<f64>,
    eta2: f64,
) -> (f64, f64) {
    let g1 = y.dot(xi1) - eta1;
    let g2 = y.dot(xi2) - eta2;
    if g1 <= 0.0 && g2 <= 0.0 {
        return (0.0, 0.0);
    }
    let n1 = xi1.norm_squared();
    let n2 = xi2.norm_squared();
    let p = xi1.dot(xi2);
    let both_active = n2 * g1 > p * g2 && n1 * g2 > p * g1;
    if both_active {
        let det = n1 * n2 - p * p;
        if det > 1e-300 {
            return ((n2 * g1 - p * g2) / det, (n1 * g2 - p * g1) / det);
        }
        // parallel constraint directions never reach this branch for a
        // nonempty intersection; fall through to the single-plane cases
    }
    if g2 > 0.0 && n2 * g1 <= p * g2 {
        return (0.0, g2 / n2);
    }
    debug_assert!(g1 > 0.0 && n1 * g2 <= p * g1);
    (g1 / n1, 0.0)
}

/// The projected point itself.
pub fn project_point(
    y: &Vector3<f64>,
    xi1: &Vector3<f64>,
    eta1: f64,
    xi2: &Vector3<f64>,
    eta2: f64,
) -> Vector3<f64> {
    let (nu1, nu2) = projection_coefficients(y, xi1, eta1, xi2, eta2);
    y - xi1 * nu1 - xi2 * nu2
}
