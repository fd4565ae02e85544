//! Throwaway parameter-sweep harness. Runs nominal, naive-attack, and
//! greedy "perfect spoofer" trials across candidate noise configs, then
//! evaluates the raw calibrated band detector offline from logged residuals.

use spooflab::anomaly::{calibrate_band, chi2_score, TauBand};
use spooflab::attacks::{apply_injection, naive_injection, Injection, NaiveKind};
use spooflab::control::{control_update, ControllerGains};
use spooflab::ekf::{predict, update_gps, EkfConfig, IDX_POS, IDX_VEL, RES_POS_N, RES_VEL_N};
use spooflab::exp::runner::{
    mission_seed, trial_rng, STREAM_ATTACK, STREAM_BIAS_WALK, STREAM_GPS, STREAM_IMU,
    STREAM_INIT_BIAS,
};
use spooflab::missions::{MissionCursor, MissionKind, MissionSpec};
use spooflab::sim::{SimConfig, TrueState, World};

const WARMUP: f64 = 25.0;

#[derive(Clone, Copy)]
enum Attack {
    None,
    Naive(NaiveKind),
    GreedyNc,
    /// Cancellation plus a constant residual bias (pos, vel) pulling the
    /// estimate south so control pushes the true vehicle north.
    GreedyDb(f64, f64),
}

struct RunOut {
    fus_t: Vec<f64>,
    res_vel: Vec<f64>,
    res_pos: Vec<f64>,
    chi2: Vec<f64>,
    eps: Vec<f64>,
    attack_start: Option<f64>,
    end_t: f64,
}

#[allow(clippy::too_many_arguments)]
fn run(
    sim: &SimConfig,
    ekf: &EkfConfig,
    mission: &MissionSpec,
    gains: &ControllerGains,
    attack: Attack,
    start: f64,
    seed: u64,
    trial: u64,
) -> RunOut {
    let world = World::new(sim.clone());
    let mut init_rng = trial_rng(seed, trial, STREAM_INIT_BIAS);
    let mut imu_rng = trial_rng(seed, trial, STREAM_IMU);
    let mut gps_rng = trial_rng(seed, trial, STREAM_GPS);
    let mut walk_rng = trial_rng(seed, trial, STREAM_BIAS_WALK);
    let mut attack_rng = trial_rng(seed, trial, STREAM_ATTACK);

    let mut truth = TrueState::hovering(mission.altitude);
    truth.accel_bias = world.draw_initial_bias(&mut init_rng);
    let mut est = ekf.init_state(truth.pos, truth.vel, truth.yaw);
    let mut cursor = MissionCursor::new(mission, mission_seed(seed, trial));

    let steps = (mission.duration / sim.dt).round() as u64;
    let mut out = RunOut {
        fus_t: Vec::new(),
        res_vel: Vec::new(),
        res_pos: Vec::new(),
        chi2: Vec::new(),
        eps: Vec::new(),
        attack_start: None,
        end_t: 0.0,
    };

    for k in 0..steps {
        if cursor.complete() {
            break;
        }
        let setpoint = cursor.setpoint(&est, truth.t);
        let act = control_update(&est, &setpoint, gains);
        let imu = world.sample_imu(&truth, &act, &mut imu_rng);
        truth = world.step_dynamics(&truth, &act);
        world.walk_bias(&mut truth, &mut walk_rng);
        est = predict(&est, &imu, sim.dt, ekf).expect("predict");

        if (k + 1) % u64::from(sim.gps_divider) == 0 {
            let mut gps = world.sample_gps(&truth, &mut gps_rng);
            let mut inj = Injection::ZERO;
            if truth.t >= start {
                match attack {
                    Attack::None => {}
                    Attack::Naive(kind) => {
                        out.attack_start.get_or_insert(truth.t);
                        inj = naive_injection(kind, truth.t - start, &mut attack_rng);
                    }
                    Attack::GreedyNc => {
                        out.attack_start.get_or_insert(truth.t);
                        inj = Injection {
                            d_vel_n: est.x[IDX_VEL] - gps.vel[0],
                            d_pos_n: est.x[IDX_POS] - gps.pos[0],
                        };
                    }
                    Attack::GreedyDb(bp, bv) => {
                        out.attack_start.get_or_insert(truth.t);
                        inj = Injection {
                            d_vel_n: (est.x[IDX_VEL] - bv) - gps.vel[0],
                            d_pos_n: (est.x[IDX_POS] - bp) - gps.pos[0],
                        };
                    }
                }
            }
            apply_injection(&mut gps, inj);
            let outcome = update_gps(&est, &gps, ekf.joseph_form).expect("update");
            let score = chi2_score(&outcome.residual, &outcome.innov_cov, 5.0).expect("chi2");
            est = outcome.state;

            out.fus_t.push(truth.t);
            out.res_vel.push(outcome.residual[RES_VEL_N]);
            out.res_pos.push(outcome.residual[RES_POS_N]);
            out.chi2.push(score);
            let en = truth.pos.x - est.x[IDX_POS];
            let ee = truth.pos.y - est.x[IDX_POS + 1];
            out.eps.push(en.hypot(ee));
        }
        out.end_t = truth.t;
    }
    out
}

/// First exceedance at/after the attack start (noise exceedances before the
/// attack don't end a window that hasn't opened).
fn first_alarm_after(r: &RunOut, bands: &[TauBand; 2], start: f64) -> Option<(usize, f64)> {
    for i in 0..r.fus_t.len() {
        if r.fus_t[i] < start {
            continue;
        }
        for (a, series) in [&r.res_vel, &r.res_pos].iter().enumerate() {
            let v = series[i];
            if v <= bands[a].cal_min || v >= bands[a].cal_max {
                return Some((i, r.fus_t[i]));
            }
        }
    }
    None
}

/// Max eps over fusion ticks in [attack_start, alarm_time); whole attack
/// window if no alarm.
fn stealthy_dev(r: &RunOut, alarm: Option<(usize, f64)>) -> f64 {
    let start = r.attack_start.unwrap_or(f64::INFINITY);
    let stop = alarm.map(|(i, _)| i).unwrap_or(r.fus_t.len());
    let mut m: f64 = 0.0;
    for i in 0..stop {
        if r.fus_t[i] >= start {
            m = m.max(r.eps[i]);
        }
    }
    m
}

fn chi2_max(r: &RunOut) -> f64 {
    r.chi2.iter().cloned().fold(0.0, f64::max)
}

fn mission_spec(kind: MissionKind, circle_dur: f64, linear_speed: f64) -> MissionSpec {
    let mut spec = MissionSpec { kind, ..MissionSpec::default() };
    match kind {
        MissionKind::Circle => spec.duration = circle_dur,
        MissionKind::Linear => {
            spec.duration = 80.0;
            spec.linear_leg = 14.0;
            spec.linear_speed = linear_speed;
        }
        _ => {}
    }
    spec
}

struct Variant {
    name: &'static str,
    walk: f64,
    accel: f64,
    vel_sigma: f64,
    bias_init: f64,
    rep_h: f64,
    rep_s: f64,
    circle_dur: f64,
    linear_speed: f64,
}

fn configs(v: &Variant) -> (SimConfig, EkfConfig) {
    let mut sim = SimConfig::default();
    sim.gps_divider = 100; // 1 Hz GPS
    sim.bias_walk_sigma = v.walk;
    sim.accel_noise_sigma = v.accel;
    sim.gps_vel_sigma = v.vel_sigma;
    sim.bias_init_sigma = v.bias_init;
    sim.reported_h_acc = v.rep_h;
    sim.reported_s_acc = v.rep_s;
    let mut ekf = EkfConfig::default();
    ekf.bias_walk_sigma = v.walk;
    ekf.accel_noise_sigma = v.accel;
    (sim, ekf)
}

fn fmt_alarm(a: Option<(usize, f64)>, start: f64) -> String {
    match a {
        Some((_, t)) => format!("{:+.1}", t - start),
        None => "none".into(),
    }
}

fn main() {
    let variants = [
        Variant { name: "J0 warm25 c480 lin0.8 leg14", walk: 3e-4, accel: 0.0065, vel_sigma: 0.065, bias_init: 0.005, rep_h: 0.75, rep_s: 0.75, circle_dur: 480.0, linear_speed: 0.8 },
    ];
    let gains = ControllerGains::default();
    let missions = [MissionKind::Hold, MissionKind::Circle, MissionKind::Linear];
    let seed = 11u64;
    let start = 27.0;

    for v in &variants {
        let (sim, ekf) = configs(v);
        println!("=== {} (raw band, 1 Hz GPS) ===", v.name);
        for &mk in &missions {
            let spec = mission_spec(mk, v.circle_dur, v.linear_speed);

            // Nominal: trials 0..10 calibrate, 10..18 fresh evaluation.
            let nominal: Vec<RunOut> = (0..18)
                .map(|tr| run(&sim, &ekf, &spec, &gains, Attack::None, f64::INFINITY, seed, tr))
                .collect();
            let mut vel_samples = Vec::new();
            let mut pos_samples = Vec::new();
            for r in &nominal[..10] {
                for i in 0..r.fus_t.len() {
                    if r.fus_t[i] >= WARMUP {
                        vel_samples.push(r.res_vel[i]);
                        pos_samples.push(r.res_pos[i]);
                    }
                }
            }
            let bands = [
                calibrate_band(&vel_samples, 1.0).expect("band"),
                calibrate_band(&pos_samples, 1.0).expect("band"),
            ];
            let e_eps: f64 = nominal
                .iter()
                .map(|r| r.eps.iter().sum::<f64>() / r.eps.len() as f64)
                .sum::<f64>()
                / nominal.len() as f64;
            // Fresh-run per-axis FPR (post-warmup raw-band exceedances).
            let mut exceed = [0usize; 2];
            let mut union = 0usize;
            let mut total = 0usize;
            let mut chi2_nom_max: f64 = 0.0;
            for r in &nominal[10..] {
                for i in 0..r.fus_t.len() {
                    if r.fus_t[i] < WARMUP {
                        continue;
                    }
                    total += 1;
                    let ve = r.res_vel[i] <= bands[0].cal_min || r.res_vel[i] >= bands[0].cal_max;
                    let pe = r.res_pos[i] <= bands[1].cal_min || r.res_pos[i] >= bands[1].cal_max;
                    exceed[0] += usize::from(ve);
                    exceed[1] += usize::from(pe);
                    union += usize::from(ve || pe);
                }
                chi2_nom_max = chi2_nom_max.max(chi2_max(r));
            }
            println!(
                "{:>7}: E[eps] {:.4}  FPR% pooled {:.1} axes [{:.1} {:.1}] union {:.1}  chi2max {:.3}  calHalf [{:.4} {:.4}]  fus/run {}  end_t {:.1}",
                format!("{mk:?}"),
                e_eps,
                100.0 * (exceed[0] + exceed[1]) as f64 / (2.0 * total as f64),
                100.0 * exceed[0] as f64 / total as f64,
                100.0 * exceed[1] as f64 / total as f64,
                100.0 * union as f64 / total as f64,
                chi2_nom_max,
                0.5 * (bands[0].cal_max - bands[0].cal_min),
                0.5 * (bands[1].cal_max - bands[1].cal_min),
                nominal[0].fus_t.len(),
                nominal[0].end_t,
            );

            // Diagnostic: where do fresh-run pos-axis exceedances happen?
            if false {
                let mut hist = std::collections::BTreeMap::new();
                for r in &nominal[10..] {
                    for i in 0..r.fus_t.len() {
                        if r.fus_t[i] < WARMUP {
                            continue;
                        }
                        let pe =
                            r.res_pos[i] <= bands[1].cal_min || r.res_pos[i] >= bands[1].cal_max;
                        if pe {
                            *hist.entry(r.fus_t[i] as u64).or_insert(0usize) += 1;
                        }
                    }
                }
                let line: Vec<String> =
                    hist.iter().map(|(t, n)| format!("{t}s:{n}")).collect();
                println!("         pos-exceed by tick: {}", line.join(" "));
            }

            // PBF survival stats over 10 trials.
            if mk != MissionKind::Hold || true {
                let mut times = Vec::new();
                let mut devs = Vec::new();
                let mut survive10 = 0;
                for tr in 0..10 {
                    let r = run(&sim, &ekf, &spec, &gains, Attack::Naive(NaiveKind::Pbf), start, seed, tr);
                    let a = first_alarm_after(&r, &bands, r.attack_start.unwrap_or(start));
                    let rel = a.map(|(_, t)| t - r.attack_start.unwrap_or(start));
                    if rel.map(|x| x >= 10.0 - 1e-6).unwrap_or(false) {
                        survive10 += 1;
                    }
                    times.push(match rel {
                        Some(x) => format!("{x:+.0}"),
                        None => "--".into(),
                    });
                    devs.push(format!("{:.2}", stealthy_dev(&r, a)));
                }
                println!(
                    "         pbf 10-trial alarms [{}] devs [{}] survive10s {}/10",
                    times.join(","),
                    devs.join(","),
                    survive10
                );
            }

            // Naive attacks, 3 seeds each; mean stealthy dev per kind.
            let mut best_naive_mean: f64 = 0.0;
            for kind in NaiveKind::ALL {
                let mut alarms = Vec::new();
                let mut devs = Vec::new();
                let mut c2s = Vec::new();
                let mut dev_sum = 0.0;
                for tr in 0..3 {
                    let r = run(&sim, &ekf, &spec, &gains, Attack::Naive(kind), start, seed, tr);
                    let a = first_alarm_after(&r, &bands, r.attack_start.unwrap_or(start));
                    let d = stealthy_dev(&r, a);
                    dev_sum += d;
                    alarms.push(fmt_alarm(a, r.attack_start.unwrap_or(start)));
                    devs.push(format!("{d:.3}"));
                    c2s.push(format!("{:.2}", chi2_max(&r)));
                }
                best_naive_mean = best_naive_mean.max(dev_sum / 3.0);
                println!(
                    "         {kind}: alarm[{}] dev[{}] chi2max [{}]",
                    alarms.join(","),
                    devs.join(","),
                    c2s.join(",")
                );
            }

            // Greedy spoofers.
            for (label, atk) in
                [
                    ("g-nc", Attack::GreedyNc),
                    (
                        "g-db",
                        Attack::GreedyDb(
                            0.35 * (bands[1].cal_max - bands[1].cal_min),
                            0.35 * (bands[0].cal_max - bands[0].cal_min),
                        ),
                    ),
                ]
            {
                let mut alarms = Vec::new();
                let mut devs = Vec::new();
                let mut c2: f64 = 0.0;
                let mut dev_sum = 0.0;
                for tr in 0..5 {
                    let r = run(&sim, &ekf, &spec, &gains, atk, start, seed, tr);
                    let a = first_alarm_after(&r, &bands, r.attack_start.unwrap_or(start));
                    let d = stealthy_dev(&r, a);
                    if tr < 3 {
                        dev_sum += d;
                    }
                    alarms.push(fmt_alarm(a, r.attack_start.unwrap_or(start)));
                    devs.push(format!("{d:.3}"));
                    c2 = c2.max(chi2_max(&r));
                }
                println!(
                    "         {label}: alarm[{}] dev[{}] mean3 {:.3} chi2max {:.3}  (need >= {:.2} [10x naive] / {:.2} [20xE]; lin 5x {:.2}; hold 3xE {:.2})",
                    alarms.join(","),
                    devs.join(","),
                    dev_sum / 3.0,
                    c2,
                    10.0 * best_naive_mean,
                    20.0 * e_eps,
                    5.0 * best_naive_mean,
                    3.0 * e_eps,
                );
            }
        }
        println!();
    }
}
