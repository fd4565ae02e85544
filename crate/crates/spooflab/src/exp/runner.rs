//! The closed-loop trial: plant, sensors, optional injection, filter,
//! detectors, controller — one tick at a time.
//!
//! Per dynamics tick: the mission produces a setpoint from the *estimate*,
//! the controller acts on it, the IMU samples the step the plant is about to
//! take, the plant steps, and the filter predicts. Every `gps_divider`-th
//! tick a GPS fix is sampled from the new true state, optionally perturbed
//! by the active attack, fused, and scored by both detectors.
//!
//! Determinism: every random draw comes from one of five fixed ChaCha
//! streams derived from `(seed, trial)`, so a trial is a pure function of
//! its setup.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anomaly::{chi2_score, tau_check, DetectorConfig, TauThresholds};
use crate::attacks::{apply_injection, naive_injection, Injection, NaiveKind};
use crate::control::{control_update, ControllerGains};
use crate::ekf::{predict, update_gps, EkfConfig, RES_POS_N, RES_VEL_N};
use crate::error::{Error, Result};
use crate::metrics::{RunLog, TickRecord};
use crate::missions::{MissionCursor, MissionSpec};
use crate::nn::model::RegressionModel;
use crate::sim::{SimConfig, TrueState, World};
use crate::snapshot::{Snapshot, SnapshotFull};
use crate::spoofer::{spoof, SpooferKind};

/// RNG stream drawing the initial accelerometer bias.
pub const STREAM_INIT_BIAS: u64 = 0;
/// RNG stream for IMU noise.
pub const STREAM_IMU: u64 = 1;
/// RNG stream for GPS noise.
pub const STREAM_GPS: u64 = 2;
/// RNG stream for the bias random walk.
pub const STREAM_BIAS_WALK: u64 = 3;
/// RNG stream consumed by randomized attacks.
pub const STREAM_ATTACK: u64 = 4;

/// Mix an experiment seed and a trial index into one 64-bit stream base.
pub fn trial_base(seed: u64, trial: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial)
}

/// The RNG for one purpose-stream of one trial.
pub fn trial_rng(seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_base(seed, trial));
    rng.set_stream(stream);
    rng
}

/// Seed that parameterizes the mission profile (Brownian waypoints) of one
/// trial; other profiles ignore it.
pub fn mission_seed(seed: u64, trial: u64) -> u64 {
    trial_base(seed, trial)
}

/// Attack wiring for one trial.
#[derive(Debug, Clone, Copy)]
pub enum AttackMode<'a> {
    None,
    Naive { kind: NaiveKind, start: f64 },
    Spoofer { g: &'a RegressionModel, kind: SpooferKind, start: f64 },
}

impl AttackMode<'_> {
    pub fn label(&self) -> String {
        match self {
            AttackMode::None => "none".into(),
            AttackMode::Naive { kind, .. } => kind.to_string(),
            AttackMode::Spoofer { kind, .. } => kind.to_string(),
        }
    }
}

/// Everything a trial needs.
#[derive(Clone)]
pub struct TrialSetup<'a> {
    pub sim: &'a SimConfig,
    pub ekf: &'a EkfConfig,
    pub mission: &'a MissionSpec,
    pub detector: &'a DetectorConfig,
    pub gains: &'a ControllerGains,
    /// Band-detector thresholds; the band detector is off when absent.
    pub tau: Option<&'a TauThresholds>,
    pub attack: AttackMode<'a>,
    pub joseph_form: bool,
    pub seed: u64,
    pub trial: u64,
    /// Record a replayable snapshot at every GPS fusion.
    pub collect_snapshots: bool,
}

/// Everything a trial produces.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub log: RunLog,
    /// One per GPS fusion when snapshot collection is on.
    pub snapshots: Vec<Snapshot>,
    /// Raw residual samples per monitored axis (calibration input).
    pub residuals_by_axis: Vec<Vec<f64>>,
    /// Set when the estimator diverged; the log holds the ticks up to the
    /// failure.
    pub aborted: Option<String>,
}

/// Run one closed-loop trial.
pub fn run_trial(s: &TrialSetup) -> Result<TrialOutput> {
    s.sim.validate()?;
    s.ekf.validate()?;
    s.mission.validate()?;
    s.detector.validate()?;
    s.gains.validate()?;

    let world = World::new(s.sim.clone());
    let mut init_rng = trial_rng(s.seed, s.trial, STREAM_INIT_BIAS);
    let mut imu_rng = trial_rng(s.seed, s.trial, STREAM_IMU);
    let mut gps_rng = trial_rng(s.seed, s.trial, STREAM_GPS);
    let mut walk_rng = trial_rng(s.seed, s.trial, STREAM_BIAS_WALK);
    let mut attack_rng = trial_rng(s.seed, s.trial, STREAM_ATTACK);

    let mut truth = TrueState::hovering(s.mission.altitude);
    truth.accel_bias = world.draw_initial_bias(&mut init_rng);
    let mut est = s.ekf.init_state(truth.pos, truth.vel, truth.yaw);
    let mut cursor = MissionCursor::new(s.mission, mission_seed(s.seed, s.trial));

    let steps = (s.mission.duration / s.sim.dt).round() as u64;
    let mut ticks: Vec<TickRecord> = Vec::with_capacity(steps as usize);
    let mut snapshots = Vec::new();
    let mut residuals_by_axis = vec![Vec::new(); s.detector.monitored_axes.len()];
    let mut attack_start: Option<f64> = None;
    let mut aborted = None;

    for k in 0..steps {
        if cursor.complete() {
            break;
        }
        let setpoint = cursor.setpoint(&est, truth.t);
        let act = control_update(&est, &setpoint, s.gains);
        let imu = world.sample_imu(&truth, &act, &mut imu_rng);
        truth = world.step_dynamics(&truth, &act);
        world.walk_bias(&mut truth, &mut walk_rng);
        est = match predict(&est, &imu, s.sim.dt, s.ekf) {
            Ok(e) => e,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };

        // Grid-exact tick time. `truth.t` accumulates rounding from repeated
        // `+= dt`, which would make window comparisons (warm-up, attack
        // start, stealth durations) flip on sub-nanosecond dust.
        let t_k = (k + 1) as f64 * s.sim.dt;

        let mut tick = TickRecord {
            t: t_k,
            pos_n_true: truth.pos.x,
            pos_e_true: truth.pos.y,
            pos_d_true: truth.pos.z,
            vel_n_true: truth.vel.x,
            vel_e_true: truth.vel.y,
            yaw_true: truth.yaw,
            pos_n_est: 0.0,
            pos_e_est: 0.0,
            pos_d_est: 0.0,
            vel_n_est: 0.0,
            vel_e_est: 0.0,
            yaw_est: 0.0,
            sp_pos_n: setpoint.pos.x,
            sp_pos_e: setpoint.pos.y,
            sp_pos_d: setpoint.pos.z,
            inj_pos_n: None,
            inj_vel_n: None,
            chi2: None,
            res_vel_n: None,
            res_pos_n: None,
            tau_exceed_vel_n: None,
            tau_exceed_pos_n: None,
            tau_alarm: None,
        };

        if (k + 1) % u64::from(s.sim.gps_divider) == 0 {
            let mut gps = world.sample_gps(&truth, &mut gps_rng);
            let mut inj = Injection::ZERO;
            match s.attack {
                AttackMode::None => {}
                AttackMode::Naive { kind, start } if t_k >= start => {
                    attack_start.get_or_insert(t_k);
                    inj = naive_injection(kind, t_k - start, &mut attack_rng);
                }
                AttackMode::Spoofer { g, start, .. } if t_k >= start => {
                    attack_start.get_or_insert(t_k);
                    let full = SnapshotFull::capture(&est, &gps, imu.yaw_rate, t_k);
                    inj = spoof(g, &full.features());
                }
                _ => {}
            }
            apply_injection(&mut gps, inj);

            let outcome = match update_gps(&est, &gps, s.joseph_form) {
                Ok(o) => o,
                Err(e) => {
                    aborted = Some(e.to_string());
                    break;
                }
            };
            let chi2 = match chi2_score(&outcome.residual, &outcome.innov_cov, s.detector.eta) {
                Ok(v) => v,
                Err(e) => {
                    aborted = Some(e.to_string());
                    break;
                }
            };
            if s.collect_snapshots {
                snapshots.push(Snapshot::record(&est, &gps, imu.yaw_rate, t_k, &outcome));
            }
            // The band detector and its calibration samples only exist past
            // warm-up; the filter's settling transient is not nominal data.
            let armed = t_k >= s.detector.warmup_s;
            if armed {
                for (i, &axis) in s.detector.monitored_axes.iter().enumerate() {
                    residuals_by_axis[i].push(outcome.residual[axis]);
                }
            }

            tick.inj_pos_n = Some(inj.d_pos_n);
            tick.inj_vel_n = Some(inj.d_vel_n);
            tick.chi2 = Some(chi2);
            tick.res_vel_n = Some(outcome.residual[RES_VEL_N]);
            tick.res_pos_n = Some(outcome.residual[RES_POS_N]);
            if let (true, Some(thresholds)) = (armed, s.tau) {
                let verdict = tau_check(&outcome.residual, thresholds);
                for (i, &axis) in thresholds.axes.iter().enumerate() {
                    match axis {
                        RES_VEL_N => tick.tau_exceed_vel_n = Some(verdict.exceeded[i]),
                        RES_POS_N => tick.tau_exceed_pos_n = Some(verdict.exceeded[i]),
                        _ => {}
                    }
                }
                tick.tau_alarm = Some(verdict.alarm);
            }
            est = outcome.state;
        }

        tick.pos_n_est = est.x[crate::ekf::IDX_POS];
        tick.pos_e_est = est.x[crate::ekf::IDX_POS + 1];
        tick.pos_d_est = est.x[crate::ekf::IDX_POS + 2];
        tick.vel_n_est = est.x[crate::ekf::IDX_VEL];
        tick.vel_e_est = est.x[crate::ekf::IDX_VEL + 1];
        tick.yaw_est = est.x[crate::ekf::IDX_YAW];
        ticks.push(tick);
    }

    if ticks.is_empty() && aborted.is_none() {
        return Err(Error::Config(
            "mission produced no ticks; duration shorter than one step".into(),
        ));
    }

    Ok(TrialOutput {
        log: RunLog {
            mission: s.mission.kind.to_string(),
            attack: s.attack.label(),
            seed: s.seed,
            trial: s.trial,
            dt: s.sim.dt,
            attack_start,
            ticks,
        },
        snapshots,
        residuals_by_axis,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missions::MissionKind;
    use crate::snapshot::query_target;

    fn quick_mission(kind: MissionKind, duration: f64) -> MissionSpec {
        MissionSpec { kind, duration, ..Default::default() }
    }

    fn setup<'a>(
        sim: &'a SimConfig,
        ekf: &'a EkfConfig,
        mission: &'a MissionSpec,
        detector: &'a DetectorConfig,
        gains: &'a ControllerGains,
    ) -> TrialSetup<'a> {
        TrialSetup {
            sim,
            ekf,
            mission,
            detector,
            gains,
            tau: None,
            attack: AttackMode::None,
            joseph_form: false,
            seed: 7,
            trial: 0,
            collect_snapshots: false,
        }
    }

    #[test]
    fn nominal_hold_tracks_station_and_logs_gps_cadence() {
        let sim = SimConfig::default();
        let ekf = EkfConfig::default();
        let mission = quick_mission(MissionKind::Hold, 20.0);
        let det = DetectorConfig::default();
        let gains = ControllerGains::default();
        let out = run_trial(&setup(&sim, &ekf, &mission, &det, &gains)).unwrap();
        assert!(out.aborted.is_none());
        assert_eq!(out.log.ticks.len(), 2000);
        // GPS fields appear exactly on fusion ticks.
        for (i, tick) in out.log.ticks.iter().enumerate() {
            let is_gps = (i + 1) % sim.gps_divider as usize == 0;
            assert_eq!(tick.chi2.is_some(), is_gps, "tick {i}");
        }
        // The vehicle holds station: true position stays near the origin.
        let last = out.log.ticks.last().unwrap();
        assert!(last.eps() < 0.5, "estimation error {}", last.eps());
        assert!(
            last.pos_n_true.abs() < 1.0 && last.pos_e_true.abs() < 1.0,
            "drifted to ({}, {})",
            last.pos_n_true,
            last.pos_e_true
        );
        assert!((last.pos_d_true + mission.altitude).abs() < 1.0);
        // Residual samples were gathered for both monitored axes.
        assert_eq!(out.residuals_by_axis.len(), 2);
        assert_eq!(out.residuals_by_axis[0].len(), 100);
    }

    #[test]
    fn trials_are_deterministic_and_distinct_across_indices() {
        let sim = SimConfig::default();
        let ekf = EkfConfig::default();
        let mission = quick_mission(MissionKind::Hold, 5.0);
        let det = DetectorConfig::default();
        let gains = ControllerGains::default();
        let mut s = setup(&sim, &ekf, &mission, &det, &gains);
        let a = run_trial(&s).unwrap();
        let b = run_trial(&s).unwrap();
        assert_eq!(
            serde_json::to_string(&a.log).unwrap(),
            serde_json::to_string(&b.log).unwrap()
        );
        s.trial = 1;
        let c = run_trial(&s).unwrap();
        assert_ne!(
            serde_json::to_string(&a.log).unwrap(),
            serde_json::to_string(&c.log).unwrap()
        );
    }

    #[test]
    fn naive_attack_records_start_and_injects_from_the_window_on() {
        let sim = SimConfig::default();
        let ekf = EkfConfig::default();
        let mission = quick_mission(MissionKind::Hold, 8.0);
        let det = DetectorConfig::default();
        let gains = ControllerGains::default();
        let mut s = setup(&sim, &ekf, &mission, &det, &gains);
        s.attack = AttackMode::Naive { kind: NaiveKind::Pco, start: 3.0 };
        let out = run_trial(&s).unwrap();
        // Attack begins on the first fusion tick at/after the window start.
        let start = out.log.attack_start.unwrap();
        let gps_dt = sim.gps_dt();
        assert!(
            start >= 3.0 - 1e-9 && start < 3.0 + gps_dt + 1e-9,
            "attack started at {start}"
        );
        for tick in &out.log.ticks {
            if let Some(inj) = tick.inj_pos_n {
                if tick.t < start {
                    assert_eq!(inj, 0.0);
                } else {
                    assert_eq!(inj, 1.0, "constant offset from the window on");
                }
            }
        }
    }

    #[test]
    fn collected_snapshots_replay_bit_exactly() {
        let sim = SimConfig::default();
        let ekf = EkfConfig::default();
        let mission = quick_mission(MissionKind::Brownian, 10.0);
        let det = DetectorConfig::default();
        let gains = ControllerGains::default();
        let mut s = setup(&sim, &ekf, &mission, &det, &gains);
        s.collect_snapshots = true;
        let out = run_trial(&s).unwrap();
        assert!(!out.snapshots.is_empty());
        for snap in &out.snapshots {
            let again = query_target(&snap.full, &snap.full.gps, false).unwrap();
            for i in 0..6 {
                assert_eq!(snap.label.residual[i], again.residual[i]);
            }
            assert_eq!(snap.label.x_post, again.state.x.iter().cloned().collect::<Vec<_>>());
        }
    }

    #[test]
    fn linear_mission_completes_before_the_duration_cap() {
        let sim = SimConfig::default();
        let ekf = EkfConfig::default();
        let mission = quick_mission(MissionKind::Linear, 120.0);
        let det = DetectorConfig::default();
        let gains = ControllerGains::default();
        let out = run_trial(&setup(&sim, &ekf, &mission, &det, &gains)).unwrap();
        let end = out.log.ticks.last().unwrap().t;
        assert!(end < 120.0, "rectangle should finish early, ran {end} s");
        // It actually visited the east and north-east corners.
        let near = |ticks: &[TickRecord], n: f64, e: f64| {
            ticks.iter().any(|t| {
                ((t.pos_n_true - n).powi(2) + (t.pos_e_true - e).powi(2)).sqrt() < 0.6
            })
        };
        assert!(near(&out.log.ticks, 0.0, 10.0));
        assert!(near(&out.log.ticks, 10.0, 10.0));
    }
}
