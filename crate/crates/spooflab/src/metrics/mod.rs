//! Run logs and attack-effect metrics.
//!
//! Every closed-loop run produces one [`TickRecord`] per control tick;
//! GPS-update quantities (residuals, detector scores, injections) are only
//! present on fusion ticks. Logs serialize to CSV losslessly: floats are
//! written in shortest round-trip form, so re-reading a log reproduces the
//! exact bit pattern — the foundation of the byte-identical replay
//! guarantees.
//!
//! From a log we compute four metrics per run, two per detector:
//!
//! * stealth status against the quadratic-form detector and against the
//!   residual-band detector: `Stealthy` (never alarmed), `Partial` (alarmed
//!   more than 1 s after attack start), `Fail` (alarmed within 1 s);
//! * the stealthy deviation: the largest true-vs-estimated horizontal error
//!   from attack start (run start when unattacked) up to, but excluding,
//!   that detector's first alarm (to the end of the run if it never fires).
//!
//! On attacked runs only alarms at or after the attack start count: the
//! band detector has a by-design nominal exceedance rate, and a pre-attack
//! false positive says nothing about the attack.

pub mod gmm;
pub mod tbd;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One control tick of a closed-loop run.
///
/// `None` fields mark ticks without a GPS fusion. Angles are radians,
/// positions meters (NED), velocities m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    // True vehicle state.
    pub pos_n_true: f64,
    pub pos_e_true: f64,
    pub pos_d_true: f64,
    pub vel_n_true: f64,
    pub vel_e_true: f64,
    pub yaw_true: f64,
    // Estimator state.
    pub pos_n_est: f64,
    pub pos_e_est: f64,
    pub pos_d_est: f64,
    pub vel_n_est: f64,
    pub vel_e_est: f64,
    pub yaw_est: f64,
    // Commanded setpoint.
    pub sp_pos_n: f64,
    pub sp_pos_e: f64,
    pub sp_pos_d: f64,
    // GPS fusion tick data.
    pub inj_pos_n: Option<f64>,
    pub inj_vel_n: Option<f64>,
    /// Quadratic-form detector score, already normalized by its threshold
    /// (>= 1 means alarm).
    pub chi2: Option<f64>,
    pub res_vel_n: Option<f64>,
    pub res_pos_n: Option<f64>,
    pub tau_exceed_vel_n: Option<bool>,
    pub tau_exceed_pos_n: Option<bool>,
    /// Debounced residual-band alarm verdict for this fusion tick.
    pub tau_alarm: Option<bool>,
}

impl TickRecord {
    /// Horizontal (north/east) distance between true and estimated position.
    pub fn eps(&self) -> f64 {
        (self.pos_n_true - self.pos_n_est).hypot(self.pos_e_true - self.pos_e_est)
    }
}

/// A complete run: identification plus the tick series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub mission: String,
    pub attack: String,
    pub seed: u64,
    pub trial: u64,
    pub dt: f64,
    /// Attack activation time, if an attack was configured.
    pub attack_start: Option<f64>,
    pub ticks: Vec<TickRecord>,
}

/// Write the tick series as CSV (headers from the field names).
pub fn write_ticks_csv<W: std::io::Write>(w: W, ticks: &[TickRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for t in ticks {
        wtr.serialize(t)?;
    }
    wtr.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// Read a tick series back from CSV.
pub fn read_ticks_csv<R: std::io::Read>(r: R) -> Result<Vec<TickRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Stealth classification of one run against one detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StealthStatus {
    /// Detector never fired.
    Stealthy,
    /// Detector fired, but more than 1 s after the attack started.
    Partial,
    /// Detector fired within 1 s of attack start (prompt detection).
    Fail,
}

impl std::fmt::Display for StealthStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StealthStatus::Stealthy => "stealthy",
            StealthStatus::Partial => "partial",
            StealthStatus::Fail => "fail",
        })
    }
}

/// Window after attack start within which an alarm counts as prompt
/// detection (status `Fail`).
pub const PROMPT_DETECTION_WINDOW_S: f64 = 1.0;

/// Per-run metric set (two detectors, status + stealthy deviation each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Mean true-vs-estimated horizontal error over the whole run.
    pub eps_mean: f64,
    /// Max true-vs-estimated horizontal error over the whole run.
    pub eps_max: f64,
    pub run_end: f64,
    /// First quadratic-form alarm at/after attack start (anywhere in the
    /// run when unattacked).
    pub chi2_first_alarm: Option<f64>,
    /// First residual-band alarm at/after attack start (anywhere in the run
    /// when unattacked).
    pub tau_first_alarm: Option<f64>,
    pub status_chi2: StealthStatus,
    pub status_tau: StealthStatus,
    /// Max eps from attack start (run start when unattacked) up to, but
    /// excluding, the first quadratic-form alarm.
    pub deviation_chi2: f64,
    /// Max eps from attack start (run start when unattacked) up to, but
    /// excluding, the first residual-band alarm.
    pub deviation_tau: f64,
    /// Alarm time minus attack start; `None` when there is no attack or no
    /// alarm.
    pub stealth_time_chi2: Option<f64>,
    pub stealth_time_tau: Option<f64>,
    /// Fraction of per-axis band checks that exceeded, pooled over the
    /// monitored axes; on a nominal run this estimates the detector's false
    /// positive rate. `None` when the band detector never ran.
    pub tau_exceed_rate: Option<f64>,
}

fn classify(first_alarm: Option<f64>, attack_start: Option<f64>) -> StealthStatus {
    match (first_alarm, attack_start) {
        (None, _) => StealthStatus::Stealthy,
        // No attack configured: any alarm is a (partial) false positive,
        // never a prompt detection.
        (Some(_), None) => StealthStatus::Partial,
        (Some(alarm), Some(start)) => {
            if alarm - start <= PROMPT_DETECTION_WINDOW_S {
                StealthStatus::Fail
            } else {
                StealthStatus::Partial
            }
        }
    }
}

fn max_eps_in_window(ticks: &[TickRecord], from: Option<f64>, until: Option<f64>) -> f64 {
    ticks
        .iter()
        .filter(|tk| from.map_or(true, |s| tk.t >= s) && until.map_or(true, |c| tk.t < c))
        .map(TickRecord::eps)
        .fold(0.0, f64::max)
}

/// Fraction of `Some(true)` among the present per-axis exceedance flags.
fn pooled_exceed_rate(ticks: &[TickRecord]) -> Option<f64> {
    let mut checks = 0usize;
    let mut exceeded = 0usize;
    for tk in ticks {
        for flag in [tk.tau_exceed_vel_n, tk.tau_exceed_pos_n] {
            if let Some(e) = flag {
                checks += 1;
                exceeded += usize::from(e);
            }
        }
    }
    (checks > 0).then(|| exceeded as f64 / checks as f64)
}

/// Compute the run metric set from a log.
pub fn compute_metrics(log: &RunLog) -> RunMetrics {
    let n = log.ticks.len().max(1) as f64;
    let eps_mean = log.ticks.iter().map(TickRecord::eps).sum::<f64>() / n;
    let eps_max = log.ticks.iter().map(TickRecord::eps).fold(0.0, f64::max);
    let run_end = log.ticks.last().map_or(0.0, |tk| tk.t);

    // On attacked runs, only alarms from the attack start onward count.
    let in_scope = |t: f64| log.attack_start.map_or(true, |s| t >= s);
    let chi2_first_alarm = log
        .ticks
        .iter()
        .find(|tk| in_scope(tk.t) && tk.chi2.is_some_and(|s| s >= 1.0))
        .map(|tk| tk.t);
    let tau_first_alarm = log
        .ticks
        .iter()
        .find(|tk| in_scope(tk.t) && tk.tau_alarm == Some(true))
        .map(|tk| tk.t);

    let stealth_time = |alarm: Option<f64>| match (alarm, log.attack_start) {
        (Some(a), Some(s)) => Some(a - s),
        _ => None,
    };

    RunMetrics {
        eps_mean,
        eps_max,
        run_end,
        chi2_first_alarm,
        tau_first_alarm,
        status_chi2: classify(chi2_first_alarm, log.attack_start),
        status_tau: classify(tau_first_alarm, log.attack_start),
        deviation_chi2: max_eps_in_window(&log.ticks, log.attack_start, chi2_first_alarm),
        deviation_tau: max_eps_in_window(&log.ticks, log.attack_start, tau_first_alarm),
        stealth_time_chi2: stealth_time(chi2_first_alarm),
        stealth_time_tau: stealth_time(tau_first_alarm),
        tau_exceed_rate: pooled_exceed_rate(&log.ticks),
    }
}

/// Aggregate mark across trials: pass only if every trial stayed stealthy,
/// fail only if every trial was promptly detected, mixed otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMark {
    Pass,
    Mixed,
    Fail,
}

impl std::fmt::Display for AggregateMark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregateMark::Pass => "pass",
            AggregateMark::Mixed => "mixed",
            AggregateMark::Fail => "fail",
        })
    }
}

pub fn aggregate_status(statuses: &[StealthStatus]) -> AggregateMark {
    if statuses.iter().all(|s| *s == StealthStatus::Stealthy) {
        AggregateMark::Pass
    } else if statuses.iter().all(|s| *s == StealthStatus::Fail) {
        AggregateMark::Fail
    } else {
        AggregateMark::Mixed
    }
}
