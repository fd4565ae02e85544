//! Mission profiles: setpoint generation and the planned reference path.
//!
//! Four profiles:
//! * `Hold` — a single setpoint at altitude.
//! * `Circle` — constant forward speed with a constant counter-clockwise
//!   yaw rate; the resulting planned path is a circle of radius
//!   `speed / yaw_rate` entered at the spawn point heading north.
//! * `Linear` — a rectangle leg: origin → 10 m east → +10 m north → origin.
//! * `Brownian` — a seeded random walk of setpoints (`p0 = (0,0)`,
//!   `p_{k+1} = p_k + eps`, `eps ~ N(0, I)` in the NE plane) with a uniform
//!   random yaw per setpoint; used to collect training corpora that cover
//!   the estimator's input space.
//!
//! Waypoint missions advance when the *estimate* converges to the current
//! setpoint (position within `pos_tol`, yaw within `yaw_tol`): the vehicle
//! believes it has arrived, wherever it truly is. The rectangle leg instead
//! paces a carrot setpoint along its perimeter at constant ground speed and
//! completes when the carrot is home and the estimate has converged onto it.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ekf::EkfState;
use crate::error::{Error, Result};
use crate::frames::wrap_angle;

/// Mission profile selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionKind {
    Hold,
    Circle,
    Linear,
    Brownian,
}

impl std::fmt::Display for MissionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MissionKind::Hold => "hold",
            MissionKind::Circle => "circle",
            MissionKind::Linear => "linear",
            MissionKind::Brownian => "brownian",
        };
        f.write_str(s)
    }
}

/// Mission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionSpec {
    pub kind: MissionKind,
    /// Mission altitude, metres above ground.
    pub altitude: f64,
    /// Wall-clock cap, seconds. Waypoint missions may finish earlier.
    pub duration: f64,
    /// Circle forward speed, m/s.
    pub circle_speed: f64,
    /// Circle yaw rate, deg/s (counter-clockwise positive).
    pub circle_yaw_rate_deg: f64,
    /// Side length of the linear rectangle leg, metres.
    pub linear_leg: f64,
    /// Ground speed pacing the rectangle leg, m/s.
    pub linear_speed: f64,
    /// Number of random setpoints in a Brownian mission.
    pub brownian_setpoints: u32,
    /// Convergence: estimated position within this of the setpoint, metres.
    pub pos_tol: f64,
    /// Convergence: estimated yaw within this of the setpoint, degrees.
    pub yaw_tol_deg: f64,
}

impl Default for MissionSpec {
    fn default() -> Self {
        MissionSpec {
            kind: MissionKind::Hold,
            altitude: 10.0,
            duration: 120.0,
            circle_speed: 5.0,
            circle_yaw_rate_deg: 30.0,
            linear_leg: 14.0,
            linear_speed: 0.8,
            brownian_setpoints: 10,
            pos_tol: 0.3,
            yaw_tol_deg: 1.0,
        }
    }
}

impl MissionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration <= 0.0 || !self.duration.is_finite() {
            return Err(Error::Config(format!("mission.duration must be positive, got {}", self.duration)));
        }
        if self.altitude <= 0.0 {
            return Err(Error::Config("mission.altitude must be positive".into()));
        }
        if self.kind == MissionKind::Circle && (self.circle_speed <= 0.0 || self.circle_yaw_rate_deg <= 0.0) {
            return Err(Error::Config("circle speed and yaw rate must be positive".into()));
        }
        if self.kind == MissionKind::Linear && (self.linear_speed <= 0.0 || self.linear_leg <= 0.0) {
            return Err(Error::Config("linear leg and pacing speed must be positive".into()));
        }
        if self.kind == MissionKind::Brownian && self.brownian_setpoints == 0 {
            return Err(Error::Config("brownian mission needs at least one setpoint".into()));
        }
        if self.pos_tol <= 0.0 || self.yaw_tol_deg <= 0.0 {
            return Err(Error::Config("convergence tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Circle radius implied by speed and yaw rate, metres.
    pub fn circle_radius(&self) -> f64 {
        self.circle_speed / self.circle_yaw_rate_deg.to_radians()
    }

    fn down(&self) -> f64 {
        -self.altitude
    }
}

/// One control target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    /// Target NED position.
    pub pos: Vector3<f64>,
    /// Velocity feed-forward (zero for waypoint missions).
    pub vel_ff: Vector3<f64>,
    /// Target yaw, radians.
    pub yaw: f64,
    /// Yaw-rate feed-forward, rad/s.
    pub yaw_rate_ff: f64,
}

impl Setpoint {
    fn hold_at(pos: Vector3<f64>, yaw: f64) -> Self {
        Setpoint { pos, vel_ff: Vector3::zeros(), yaw, yaw_rate_ff: 0.0 }
    }
}

/// Derive the Brownian setpoint list for a mission seed.
pub fn brownian_setpoints(seed: u64, count: u32, altitude: f64) -> Vec<(Vector3<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p = Vector3::new(0.0, 0.0, -altitude);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        p.x += step.sample(&mut rng);
        p.y += step.sample(&mut rng);
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        out.push((p, yaw));
    }
    out
}

/// Tracks progress through a mission and produces the current setpoint.
#[derive(Debug, Clone)]
pub struct MissionCursor {
    spec: MissionSpec,
    waypoints: Vec<(Vector3<f64>, f64)>,
    wp_index: usize,
    complete: bool,
}

impl MissionCursor {
    fn linear_corners(&self) -> [Vector3<f64>; 4] {
        let d = self.spec.down();
        let leg = self.spec.linear_leg;
        [
            Vector3::new(0.0, 0.0, d),
            Vector3::new(0.0, leg, d),
            Vector3::new(leg, leg, d),
            Vector3::new(0.0, 0.0, d),
        ]
    }

    /// `seed` parameterizes the Brownian profile; other profiles ignore it.
    pub fn new(spec: &MissionSpec, seed: u64) -> Self {
        let d = spec.down();
        let waypoints = match spec.kind {
            MissionKind::Hold => vec![(Vector3::new(0.0, 0.0, d), 0.0)],
            MissionKind::Brownian => brownian_setpoints(seed, spec.brownian_setpoints, spec.altitude),
            MissionKind::Linear | MissionKind::Circle => Vec::new(),
        };
        MissionCursor { spec: spec.clone(), waypoints, wp_index: 0, complete: false }
    }

    /// All mission waypoints finished (time caps are handled by the caller).
    pub fn complete(&self) -> bool {
        self.complete
    }

    /// Current setpoint given the vehicle's own estimate at time `t`.
    ///
    /// Waypoint advancement is judged on the *estimate*: convergence within
    /// `pos_tol` metres and `yaw_tol_deg` degrees.
    pub fn setpoint(&mut self, est: &EkfState, t: f64) -> Setpoint {
        match self.spec.kind {
            MissionKind::Circle => {
                let omega = self.spec.circle_yaw_rate_deg.to_radians();
                let r = self.spec.circle_radius();
                let v = self.spec.circle_speed;
                let (s, c) = (omega * t).sin_cos();
                Setpoint {
                    pos: Vector3::new(r * s, r * (c - 1.0), self.spec.down()),
                    vel_ff: Vector3::new(v * c, -v * s, 0.0),
                    yaw: wrap_angle(-omega * t),
                    yaw_rate_ff: -omega,
                }
            }
            MissionKind::Linear => {
                // Carrot paced along the rectangle at constant ground speed;
                // the run finishes once the carrot has arrived back at the
                // origin and the *estimate* has converged onto it.
                let corners = self.linear_corners();
                let speed = self.spec.linear_speed;
                let mut remaining = speed * t;
                for pair in corners.windows(2) {
                    let seg = pair[1] - pair[0];
                    let len = seg.norm();
                    if remaining <= len {
                        let dir = seg / len;
                        return Setpoint {
                            pos: pair[0] + dir * remaining,
                            vel_ff: dir * speed,
                            yaw: 0.0,
                            yaw_rate_ff: 0.0,
                        };
                    }
                    remaining -= len;
                }
                let home = corners[corners.len() - 1];
                let converged = (est.pos() - home).norm() <= self.spec.pos_tol
                    && wrap_angle(est.yaw()).abs() <= self.spec.yaw_tol_deg.to_radians();
                if converged {
                    self.complete = true;
                }
                Setpoint::hold_at(home, 0.0)
            }
            _ => {
                let last = self.waypoints.len() - 1;
                let (pos, yaw) = self.waypoints[self.wp_index];
                let converged = (est.pos() - pos).norm() <= self.spec.pos_tol
                    && wrap_angle(est.yaw() - yaw).abs() <= self.spec.yaw_tol_deg.to_radians();
                if converged {
                    if self.wp_index < last {
                        self.wp_index += 1;
                    } else if self.spec.kind != MissionKind::Hold {
                        // Hold keeps station until the duration cap.
                        self.complete = true;
                    }
                }
                let (pos, yaw) = self.waypoints[self.wp_index];
                Setpoint::hold_at(pos, yaw)
            }
        }
    }
}

/// Sample the planned (commanded) path in the NE plane.
///
/// This is the mission's ideal geometry, independent of what any run does:
/// the comparison reference for trajectory-shape divergence.
pub fn planned_path(spec: &MissionSpec, seed: u64, samples: usize) -> Vec<[f64; 2]> {
    assert!(samples >= 2);
    match spec.kind {
        MissionKind::Hold => vec![[0.0, 0.0]; samples],
        MissionKind::Circle => {
            let omega = spec.circle_yaw_rate_deg.to_radians();
            let r = spec.circle_radius();
            (0..samples)
                .map(|i| {
                    let t = spec.duration * i as f64 / (samples - 1) as f64;
                    let (s, c) = (omega * t).sin_cos();
                    [r * s, r * (c - 1.0)]
                })
                .collect()
        }
        MissionKind::Linear | MissionKind::Brownian => {
            let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
            match spec.kind {
                MissionKind::Linear => {
                    pts.push([0.0, spec.linear_leg]);
                    pts.push([spec.linear_leg, spec.linear_leg]);
                    pts.push([0.0, 0.0]);
                }
                _ => {
                    for (p, _) in brownian_setpoints(seed, spec.brownian_setpoints, spec.altitude) {
                        pts.push([p.x, p.y]);
                    }
                }
            }
            sample_polyline(&pts, samples)
        }
    }
}

/// Resample a polyline at `samples` equally spaced arc-length stations.
fn sample_polyline(pts: &[[f64; 2]], samples: usize) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return vec![pts[0]; samples];
    }
    (0..samples)
        .map(|i| {
            let target = total * i as f64 / (samples - 1) as f64;
            let j = match cum.binary_search_by(|c| c.partial_cmp(&target).unwrap()) {
                Ok(j) => j.min(pts.len() - 1),
                Err(j) => j.saturating_sub(1).min(pts.len() - 2),
            };
            if j + 1 >= pts.len() {
                return pts[pts.len() - 1];
            }
            let seg = cum[j + 1] - cum[j];
            let a = if seg > 0.0 { (target - cum[j]) / seg } else { 0.0 };
            [
                pts[j][0] + a * (pts[j + 1][0] - pts[j][0]),
                pts[j][1] + a * (pts[j + 1][1] - pts[j][1]),
            ]
        })
        .collect()
}
