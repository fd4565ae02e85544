//! Cascaded position/velocity/yaw controller.
//!
//! The controller consumes only the navigation *estimate* — never ground
//! truth. A proportional position loop produces a velocity command (clamped),
//! a proportional velocity loop produces an NED acceleration command
//! (clamped), and a proportional yaw loop produces a yaw-rate command. The
//! acceleration command is expressed in the body frame as the total specific
//! force the actuators must produce, so hover trim is `(0, 0, -g)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ekf::EkfState;
use crate::error::{Error, Result};
use crate::frames::{wrap_angle, yaw_rotation};
use crate::missions::Setpoint;
use crate::sim::Actuation;

/// Proportional gains and saturations for the cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    /// Position error to velocity command, 1/s.
    pub kp_pos: f64,
    /// Velocity error to acceleration command, 1/s.
    pub kp_vel: f64,
    /// Yaw error to yaw-rate command, 1/s.
    pub kp_yaw: f64,
    /// Commanded-velocity clamp, m/s.
    pub vel_limit: f64,
    /// Horizontal (NE) acceleration clamp, m/s^2.
    pub accel_limit_ne: f64,
    /// Vertical acceleration clamp about hover, m/s^2.
    pub accel_limit_d: f64,
    /// Yaw-rate clamp, rad/s.
    pub yaw_rate_limit: f64,
    /// Gravity used for the hover feed-forward, m/s^2.
    pub gravity: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            kp_pos: 1.1,
            kp_vel: 2.8,
            kp_yaw: 2.5,
            vel_limit: 6.0,
            accel_limit_ne: 6.0,
            accel_limit_d: 4.0,
            yaw_rate_limit: 2.0,
            gravity: 9.81,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kp_pos", self.kp_pos),
            ("kp_vel", self.kp_vel),
            ("kp_yaw", self.kp_yaw),
            ("vel_limit", self.vel_limit),
            ("accel_limit_ne", self.accel_limit_ne),
            ("accel_limit_d", self.accel_limit_d),
            ("yaw_rate_limit", self.yaw_rate_limit),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("controller.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn clamp_norm(v: Vector3<f64>, limit: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > limit {
        v * (limit / n)
    } else {
        v
    }
}

/// One controller tick: estimate + setpoint -> actuation command.
///
/// The returned `accel_cmd` is the body-frame total specific force; the
/// yaw-rate command is proportional with feed-forward.
pub fn control_update(est: &EkfState, sp: &Setpoint, gains: &ControllerGains) -> Actuation {
    // Position loop: velocity command with feed-forward, clamped.
    let vel_cmd = clamp_norm(sp.vel_ff + gains.kp_pos * (sp.pos - est.pos()), gains.vel_limit);

    // Velocity loop: NED acceleration demand about hover, clamped per axis
    // group (horizontal norm, vertical magnitude).
    let accel_dem = gains.kp_vel * (vel_cmd - est.vel());
    let mut accel_ne = Vector3::new(accel_dem.x, accel_dem.y, 0.0);
    accel_ne = clamp_norm(accel_ne, gains.accel_limit_ne);
    let accel_d = accel_dem.z.clamp(-gains.accel_limit_d, gains.accel_limit_d);

    // Total NED specific force = demand minus gravity; rotate into the body
    // frame of the *estimated* yaw (the airframe orients itself by its own
    // navigation solution).
    let ned_force = Vector3::new(accel_ne.x, accel_ne.y, accel_d - gains.gravity);
    let accel_cmd = yaw_rotation(est.yaw()).transpose() * ned_force;

    let yaw_rate_cmd = (sp.yaw_rate_ff + gains.kp_yaw * wrap_angle(sp.yaw - est.yaw()))
        .clamp(-gains.yaw_rate_limit, gains.yaw_rate_limit);

    Actuation { accel_cmd, yaw_rate_cmd }
}
