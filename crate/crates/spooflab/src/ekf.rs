//! Error-state Kalman filter over a 10-dimensional navigation state.
//!
//! State layout: `[yaw, v_n, v_e, v_d, p_n, p_e, p_d, b_ax, b_ay, b_az]`
//! (heading, NED velocity, NED position, body-frame accelerometer bias).
//!
//! Prediction integrates the bias-corrected IMU sample with the same
//! semi-implicit scheme as the plant:
//!
//! ```text
//! yaw' = yaw + yaw_rate * dt
//! vel' = vel + R(yaw) * (accel_meas - bias) * dt
//! pos' = pos + vel' * dt
//! P'   = F P F' + Q
//! ```
//!
//! The GPS update fuses the 6-vector measurement `[vel, pos]` with a linear
//! observation model; the measurement covariance is built from the
//! accuracies *reported by the receiver*, which are typically conservative.
//!
//! ```text
//! r = y - H x          (residual / innovation)
//! C = H P H' + R       (innovation covariance)
//! K = P H' C^-1        (gain)
//! x' = x + K r
//! P' = (I - K H) P     (or the Joseph form when configured)
//! ```
//!
//! Covariances are re-symmetrized after each step to keep round-off from
//! accumulating asymmetry.

use nalgebra::{Cholesky, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{wrap_angle, yaw_rotation, yaw_rotation_deriv};
use crate::sim::{GpsSample, ImuSample};

/// Number of filter states.
pub const NSTATES: usize = 10;
/// Number of measurement components in a GPS update.
pub const NMEAS: usize = 6;

/// Index of the yaw state.
pub const IDX_YAW: usize = 0;
/// Index of the first velocity state (north).
pub const IDX_VEL: usize = 1;
/// Index of the first position state (north).
pub const IDX_POS: usize = 4;
/// Index of the first accelerometer-bias state.
pub const IDX_BIAS: usize = 7;

/// Residual-vector index of the north velocity component.
pub const RES_VEL_N: usize = 0;
/// Residual-vector index of the north position component.
pub const RES_POS_N: usize = 3;

pub type StateVec = SVector<f64, NSTATES>;
pub type StateMat = SMatrix<f64, NSTATES, NSTATES>;
pub type MeasVec = SVector<f64, NMEAS>;
pub type MeasMat = SMatrix<f64, NMEAS, NMEAS>;
pub type GainMat = SMatrix<f64, NSTATES, NMEAS>;
pub type ObsMat = SMatrix<f64, NMEAS, NSTATES>;

/// Filter mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: StateVec,
    pub p: StateMat,
}

impl EkfState {
    pub fn yaw(&self) -> f64 {
        self.x[IDX_YAW]
    }
    pub fn vel(&self) -> Vector3<f64> {
        Vector3::new(self.x[IDX_VEL], self.x[IDX_VEL + 1], self.x[IDX_VEL + 2])
    }
    pub fn pos(&self) -> Vector3<f64> {
        Vector3::new(self.x[IDX_POS], self.x[IDX_POS + 1], self.x[IDX_POS + 2])
    }
    pub fn bias(&self) -> Vector3<f64> {
        Vector3::new(self.x[IDX_BIAS], self.x[IDX_BIAS + 1], self.x[IDX_BIAS + 2])
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) || self.p.iter().any(|v| !v.is_finite()) {
            return Err(Error::EstimatorDiverged(format!("non-finite value after {what}")));
        }
        Ok(())
    }
}

/// Filter tuning: process-noise intensities and initial uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    /// Accelerometer white-noise sigma assumed by the filter, m/s^2.
    pub accel_noise_sigma: f64,
    /// Yaw-rate white-noise sigma assumed by the filter, rad/s.
    pub gyro_noise_sigma: f64,
    /// Bias random-walk intensity assumed by the filter, m/s^2 per sqrt(s).
    pub bias_walk_sigma: f64,
    /// Initial 1-sigma yaw uncertainty, rad.
    pub init_yaw_sigma: f64,
    /// Initial 1-sigma velocity uncertainty per axis, m/s.
    pub init_vel_sigma: f64,
    /// Initial 1-sigma position uncertainty per axis, m.
    pub init_pos_sigma: f64,
    /// Initial 1-sigma accelerometer-bias uncertainty per axis, m/s^2.
    pub init_bias_sigma: f64,
    /// Use the Joseph-form covariance update (numerically safer, slower).
    pub joseph_form: bool,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            accel_noise_sigma: 0.0065,
            gyro_noise_sigma: 0.002,
            bias_walk_sigma: 0.0003,
            init_yaw_sigma: 0.005,
            init_vel_sigma: 0.05,
            init_pos_sigma: 0.05,
            init_bias_sigma: 0.01,
            joseph_form: false,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accel_noise_sigma", self.accel_noise_sigma),
            ("gyro_noise_sigma", self.gyro_noise_sigma),
            ("bias_walk_sigma", self.bias_walk_sigma),
            ("init_yaw_sigma", self.init_yaw_sigma),
            ("init_vel_sigma", self.init_vel_sigma),
            ("init_pos_sigma", self.init_pos_sigma),
            ("init_bias_sigma", self.init_bias_sigma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("ekf.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Initial filter state for a vehicle spawned at a known pose.
    pub fn init_state(&self, pos: Vector3<f64>, vel: Vector3<f64>, yaw: f64) -> EkfState {
        let mut x = StateVec::zeros();
        x[IDX_YAW] = yaw;
        for i in 0..3 {
            x[IDX_VEL + i] = vel[i];
            x[IDX_POS + i] = pos[i];
        }
        let mut p = StateMat::zeros();
        p[(IDX_YAW, IDX_YAW)] = self.init_yaw_sigma.powi(2);
        for i in 0..3 {
            p[(IDX_VEL + i, IDX_VEL + i)] = self.init_vel_sigma.powi(2);
            p[(IDX_POS + i, IDX_POS + i)] = self.init_pos_sigma.powi(2);
            p[(IDX_BIAS + i, IDX_BIAS + i)] = self.init_bias_sigma.powi(2);
        }
        EkfState { x, p }
    }
}

/// Everything produced by one GPS update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    /// Post-update filter state.
    pub state: EkfState,
    /// Residual `y - H x` (3 velocity components, then 3 position), pre-update.
    pub residual: MeasVec,
    /// Innovation covariance `C = H P H' + R`.
    pub innov_cov: MeasMat,
    /// Kalman gain used for the update.
    pub gain: GainMat,
}

/// Propagate the state mean through the process model (no covariance).
pub fn transition(x: &StateVec, imu: &ImuSample, dt: f64) -> StateVec {
    let yaw = x[IDX_YAW];
    let rot = yaw_rotation(yaw);
    let corrected = imu.accel_v()
        - Vector3::new(x[IDX_BIAS], x[IDX_BIAS + 1], x[IDX_BIAS + 2]);
    let accel_ned = rot * corrected;
    let mut out = *x;
    out[IDX_YAW] = wrap_angle(yaw + imu.yaw_rate * dt);
    for i in 0..3 {
        out[IDX_VEL + i] = x[IDX_VEL + i] + accel_ned[i] * dt;
        out[IDX_POS + i] = x[IDX_POS + i] + out[IDX_VEL + i] * dt;
    }
    out
}

/// Jacobian of [`transition`] with respect to the state.
pub fn transition_jacobian(x: &StateVec, imu: &ImuSample, dt: f64) -> StateMat {
    let yaw = x[IDX_YAW];
    let rot = yaw_rotation(yaw);
    let drot = yaw_rotation_deriv(yaw);
    let corrected = imu.accel_v()
        - Vector3::new(x[IDX_BIAS], x[IDX_BIAS + 1], x[IDX_BIAS + 2]);
    let dv_dyaw = drot * corrected * dt;

    let mut f = StateMat::identity();
    for i in 0..3 {
        // vel rows
        f[(IDX_VEL + i, IDX_YAW)] = dv_dyaw[i];
        for j in 0..3 {
            f[(IDX_VEL + i, IDX_BIAS + j)] = -rot[(i, j)] * dt;
        }
        // pos rows: pos' = pos + vel' * dt
        f[(IDX_POS + i, IDX_YAW)] = dv_dyaw[i] * dt;
        f[(IDX_POS + i, IDX_VEL + i)] = dt;
        for j in 0..3 {
            f[(IDX_POS + i, IDX_BIAS + j)] = -rot[(i, j)] * dt * dt;
        }
    }
    f
}

/// Process-noise covariance for one step.
///
/// White IMU noise enters the state through the same channels as the
/// measurement itself (`G diag(sigma^2) G'`), plus the bias random walk.
pub fn process_noise(x: &StateVec, cfg: &EkfConfig, dt: f64) -> StateMat {
    let rot = yaw_rotation(x[IDX_YAW]);
    let mut g = SMatrix::<f64, NSTATES, 4>::zeros();
    g[(IDX_YAW, 0)] = dt;
    for i in 0..3 {
        for j in 0..3 {
            g[(IDX_VEL + i, 1 + j)] = rot[(i, j)] * dt;
            g[(IDX_POS + i, 1 + j)] = rot[(i, j)] * dt * dt;
        }
    }
    let mut sig = SMatrix::<f64, 4, 4>::zeros();
    sig[(0, 0)] = cfg.gyro_noise_sigma.powi(2);
    for j in 1..4 {
        sig[(j, j)] = cfg.accel_noise_sigma.powi(2);
    }
    let mut q = g * sig * g.transpose();
    let qb = cfg.bias_walk_sigma.powi(2) * dt;
    for i in 0..3 {
        q[(IDX_BIAS + i, IDX_BIAS + i)] += qb;
    }
    q
}

/// EKF prediction step: integrate one IMU sample.
pub fn predict(state: &EkfState, imu: &ImuSample, dt: f64, cfg: &EkfConfig) -> Result<EkfState> {
    let f = transition_jacobian(&state.x, imu, dt);
    let q = process_noise(&state.x, cfg, dt);
    let x = transition(&state.x, imu, dt);
    let mut p = f * state.p * f.transpose() + q;
    p = (p + p.transpose()) * 0.5;
    let out = EkfState { x, p };
    out.check_finite("predict")?;
    Ok(out)
}

/// Observation matrix: the GPS measures `[vel, pos]` directly.
pub fn observation_matrix() -> ObsMat {
    let mut h = ObsMat::zeros();
    for i in 0..3 {
        h[(i, IDX_VEL + i)] = 1.0;
        h[(3 + i, IDX_POS + i)] = 1.0;
    }
    h
}

/// Measurement covariance from the accuracies reported in the sample.
pub fn measurement_covariance(gps: &GpsSample) -> MeasMat {
    let mut r = MeasMat::zeros();
    for i in 0..3 {
        r[(i, i)] = gps.s_acc.powi(2);
    }
    r[(3, 3)] = gps.h_acc.powi(2);
    r[(4, 4)] = gps.h_acc.powi(2);
    r[(5, 5)] = gps.v_acc.powi(2);
    r
}

/// Predicted measurement `h(x)`.
pub fn predicted_measurement(x: &StateVec) -> MeasVec {
    let mut y = MeasVec::zeros();
    for i in 0..3 {
        y[i] = x[IDX_VEL + i];
        y[3 + i] = x[IDX_POS + i];
    }
    y
}

/// GPS fusion step.
///
/// The residual, innovation covariance and gain depend only on the predicted
/// state and the reported accuracies — never on the measured values — so an
/// attacker who modifies the measurement changes `r` (and therefore the
/// state pull `K r`) but cannot alter `C` or `K`.
pub fn update_gps(state: &EkfState, gps: &GpsSample, joseph_form: bool) -> Result<UpdateOutcome> {
    let h = observation_matrix();
    let r_cov = measurement_covariance(gps);

    let mut y = MeasVec::zeros();
    for i in 0..3 {
        y[i] = gps.vel[i];
        y[3 + i] = gps.pos[i];
    }
    let residual = y - predicted_measurement(&state.x);

    let mut c = h * state.p * h.transpose() + r_cov;
    c = (c + c.transpose()) * 0.5;
    let chol = Cholesky::new(c)
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;

    let pht = state.p * h.transpose();
    // K = P H' C^-1  <=>  C K' = (P H')'
    let gain = chol.solve(&pht.transpose()).transpose();

    let mut x = state.x + gain * residual;
    x[IDX_YAW] = wrap_angle(x[IDX_YAW]);

    let ikh = StateMat::identity() - gain * h;
    let mut p = if joseph_form {
        ikh * state.p * ikh.transpose() + gain * r_cov * gain.transpose()
    } else {
        ikh * state.p
    };
    p = (p + p.transpose()) * 0.5;

    let out = UpdateOutcome {
        state: EkfState { x, p },
        residual,
        innov_cov: c,
        gain,
    };
    out.state.check_finite("update")?;
    Ok(out)
}
