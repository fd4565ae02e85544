//! Coordinate frames and small angle/rotation helpers.
//!
//! World frame is NED (north, east, down); yaw is the rotation about the
//! down axis, zero pointing north, positive toward east (right-handed with
//! z down). The vehicle body frame is yaw-rotated only: the reduced model
//! carries no roll/pitch.

use nalgebra::{Matrix3, Vector3};

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    } else if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Body-to-NED rotation for a pure-yaw attitude.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(
        c, -s, 0.0, //
        s, c, 0.0, //
        0.0, 0.0, 1.0,
    )
}

/// Derivative of `yaw_rotation(yaw)` with respect to yaw.
pub fn yaw_rotation_deriv(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(
        -s, -c, 0.0, //
        c, -s, 0.0, //
        0.0, 0.0, 0.0,
    )
}

/// Horizontal (north/east) norm of a NED vector.
pub fn ne_norm(v: &Vector3<f64>) -> f64 {
    (v.x * v.x + v.y * v.y).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_angle_stays_in_range() {
        for k in -20..20 {
            let a = 0.37 * k as f64;
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            assert_relative_eq!(w.sin(), a.sin(), epsilon = 1e-12);
            assert_relative_eq!(w.cos(), a.cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn yaw_rotation_is_orthonormal_and_maps_forward_to_heading() {
        let yaw = 0.7;
        let r = yaw_rotation(yaw);
        let rtr = r.transpose() * r;
        assert_relative_eq!(rtr, Matrix3::identity(), epsilon = 1e-14);
        // Body-forward (x) maps to the heading direction in NED.
        let fwd = r * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(fwd.x, yaw.cos(), epsilon = 1e-14);
        assert_relative_eq!(fwd.y, yaw.sin(), epsilon = 1e-14);
        assert_relative_eq!(fwd.z, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn yaw_rotation_deriv_matches_finite_differences() {
        let yaw = -1.2;
        let h = 1e-6;
        let fd = (yaw_rotation(yaw + h) - yaw_rotation(yaw - h)) / (2.0 * h);
        assert_relative_eq!(yaw_rotation_deriv(yaw), fd, epsilon = 1e-8);
    }
}
