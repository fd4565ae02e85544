//! Pre-update snapshots of the estimator, their feature view, and replay.
//!
//! A snapshot captures everything the GPS fusion step consumes *before* the
//! update runs: the predicted state and covariance, the GPS sample, and a
//! little sensor context. Replaying the stored record through the update
//! reproduces the stored label bit-exactly, which is what makes the snapshot
//! corpus usable as a query oracle for surrogate training: any snapshot can
//! be re-queried with a modified GPS measurement to obtain the update the
//! filter *would* have produced.
//!
//! The feature vector is a 29-dimensional narrowed view:
//!
//! | index | content                                         |
//! |-------|-------------------------------------------------|
//! | 0..10 | predicted state `[yaw, vel, pos, bias]`         |
//! | 10..19| body-to-NED rotation of the estimated yaw (row-major) |
//! | 19..22| GPS position (N, E, D)                          |
//! | 22..25| GPS velocity (N, E, D)                          |
//! | 25..28| reported accuracies (h_acc, v_acc, s_acc)       |
//! | 28    | latest measured yaw rate                        |

use serde::{Deserialize, Serialize};

use crate::ekf::{update_gps, EkfState, StateMat, StateVec, UpdateOutcome, NSTATES};
use crate::error::{Error, Result};
use crate::frames::yaw_rotation;
use crate::sim::GpsSample;

/// Schema version stamped into every serialized snapshot.
pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Width of the feature view.
pub const FEATURE_DIM: usize = 29;

/// Feature index of the predicted north velocity.
pub const FEAT_PRED_VEL_N: usize = 1;
/// Feature index of the predicted north position.
pub const FEAT_PRED_POS_N: usize = 4;
/// Feature index of the GPS north position.
pub const FEAT_GPS_POS_N: usize = 19;
/// Feature index of the GPS north velocity.
pub const FEAT_GPS_VEL_N: usize = 22;
/// Feature indices of the whole GPS position/velocity block.
pub const FEAT_GPS_BLOCK: std::ops::Range<usize> = 19..25;

/// Full pre-update record: sufficient to replay the GPS fusion exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFull {
    /// Run time of the update, seconds.
    pub t: f64,
    /// Predicted (pre-update) state mean.
    pub x_pred: Vec<f64>,
    /// Predicted covariance, row-major `NSTATES x NSTATES`.
    pub p_pred: Vec<f64>,
    /// The GPS sample fed to the update.
    pub gps: GpsSample,
    /// Body-to-NED rotation of the estimated yaw, row-major.
    pub rot: [f64; 9],
    /// Latest measured yaw rate, rad/s.
    pub yaw_rate: f64,
}

/// Label: what the update produced on the recorded input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLabel {
    /// Residual `[vel(3), pos(3)]`.
    pub residual: [f64; 6],
    /// Diagonal of the innovation covariance.
    pub innov_var: [f64; 6],
    /// Post-update state mean.
    pub x_post: Vec<f64>,
}

/// One corpus example: replayable record, feature view, and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub full: SnapshotFull,
    pub features: Vec<f64>,
    pub label: SnapshotLabel,
}

impl SnapshotFull {
    /// Capture the estimator immediately before a GPS update.
    pub fn capture(pre: &EkfState, gps: &GpsSample, yaw_rate: f64, t: f64) -> Self {
        let rot = yaw_rotation(pre.yaw());
        let mut rot_flat = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rot_flat[i * 3 + j] = rot[(i, j)];
            }
        }
        SnapshotFull {
            t,
            x_pred: pre.x.iter().cloned().collect(),
            p_pred: (0..NSTATES)
                .flat_map(|i| (0..NSTATES).map(move |j| (i, j)))
                .map(|(i, j)| pre.p[(i, j)])
                .collect(),
            gps: *gps,
            rot: rot_flat,
            yaw_rate,
        }
    }

    /// Reconstruct the pre-update estimator state.
    pub fn pre_state(&self) -> Result<EkfState> {
        if self.x_pred.len() != NSTATES || self.p_pred.len() != NSTATES * NSTATES {
            return Err(Error::MalformedArtifact(format!(
                "snapshot state has {} / {} entries",
                self.x_pred.len(),
                self.p_pred.len()
            )));
        }
        let x = StateVec::from_iterator(self.x_pred.iter().cloned());
        let p = StateMat::from_fn(|i, j| self.p_pred[i * NSTATES + j]);
        Ok(EkfState { x, p })
    }

    /// The 29-dimensional feature view of this record.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(FEATURE_DIM);
        f.extend_from_slice(&self.x_pred);
        f.extend_from_slice(&self.rot);
        f.extend_from_slice(&self.gps.pos);
        f.extend_from_slice(&self.gps.vel);
        f.push(self.gps.h_acc);
        f.push(self.gps.v_acc);
        f.push(self.gps.s_acc);
        f.push(self.yaw_rate);
        debug_assert_eq!(f.len(), FEATURE_DIM);
        f
    }

    /// Additively perturb the record field behind feature index `idx`.
    ///
    /// Every feature maps 1:1 onto a stored field, so the invariant
    /// `features() == narrowed(full)` survives perturbation and the record
    /// stays replayable.
    pub fn perturb(&mut self, idx: usize, omega: f64) {
        match idx {
            0..=9 => self.x_pred[idx] += omega,
            10..=18 => self.rot[idx - 10] += omega,
            19..=21 => self.gps.pos[idx - 19] += omega,
            22..=24 => self.gps.vel[idx - 22] += omega,
            25 => self.gps.h_acc += omega,
            26 => self.gps.v_acc += omega,
            27 => self.gps.s_acc += omega,
            28 => self.yaw_rate += omega,
            _ => panic!("feature index {idx} out of range"),
        }
    }
}

/// Replay the recorded update: feed the stored GPS sample (or an overridden
/// one) through the fusion step the record was captured from.
pub fn query_target(full: &SnapshotFull, gps: &GpsSample, joseph_form: bool) -> Result<UpdateOutcome> {
    let pre = full.pre_state()?;
    update_gps(&pre, gps, joseph_form)
}

/// Build the label from an update outcome.
pub fn label_from_outcome(out: &UpdateOutcome) -> SnapshotLabel {
    let mut residual = [0.0; 6];
    let mut innov_var = [0.0; 6];
    for i in 0..6 {
        residual[i] = out.residual[i];
        innov_var[i] = out.innov_cov[(i, i)];
    }
    SnapshotLabel {
        residual,
        innov_var,
        x_post: out.state.x.iter().cloned().collect(),
    }
}

impl Snapshot {
    /// Capture and label a snapshot from the pre-update state and its outcome.
    pub fn record(pre: &EkfState, gps: &GpsSample, yaw_rate: f64, t: f64, out: &UpdateOutcome) -> Self {
        let full = SnapshotFull::capture(pre, gps, yaw_rate, t);
        let features = full.features();
        Snapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            full,
            features,
            label: label_from_outcome(out),
        }
    }
}

/// Serialize snapshots as NDJSON (one JSON object per line).
pub fn write_ndjson<W: std::io::Write>(mut w: W, snaps: &[Snapshot]) -> Result<()> {
    for s in snaps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read snapshots back from NDJSON, enforcing the schema version.
pub fn read_ndjson<R: std::io::BufRead>(r: R) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Snapshot = serde_json::from_str(&line).map_err(|e| {
            Error::MalformedArtifact(format!("snapshot line {}: {e}", lineno + 1))
        })?;
        if s.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                expected: SNAPSHOT_SCHEMA_VERSION,
                found: s.schema_version,
            });
        }
        if s.features.len() != FEATURE_DIM {
            return Err(Error::MalformedArtifact(format!(
                "snapshot line {}: {} features, expected {FEATURE_DIM}",
                lineno + 1,
                s.features.len()
            )));
        }
        out.push(s);
    }
    Ok(out)
}
