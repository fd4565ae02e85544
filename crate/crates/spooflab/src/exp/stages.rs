//! Pipeline stages. Each stage turns a validated configuration (plus,
//! sometimes, artifacts from earlier stages) into a directory of files:
//!
//! * `collect`   — twenty random-walk missions worth of replayable fusion
//!                 snapshots, with a fixed 12/8 train/test split manifest.
//! * `calibrate` — residual-band thresholds from nominal trials.
//! * `train_surrogate_stage` — the three-slice filter surrogate plus
//!                 training curves.
//! * `train_spoofer_stage`   — an adversarially trained injection generator.
//! * `run_stage` — closed-loop trials with per-tick CSV logs and a metrics
//!                 report.
//! * `report_stage` — cross-run aggregate table plus trajectory-shape
//!                 divergence datasets.
//!
//! Every artifact embeds the plant/filter configuration hash and a schema
//! version; timestamps live only in `meta.json` sidecars so that everything
//! else is a pure function of (config, seeds).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::anomaly::{band_fpr, calibrate_tau, TauThresholds};
use crate::error::{Error, Result};
use crate::metrics::tbd::{est_ne, setpoint_ne, tbd_report, true_ne, write_tsl_csv};
use crate::metrics::{
    aggregate_status, compute_metrics, read_ticks_csv, write_ticks_csv, AggregateMark, RunMetrics,
    StealthStatus,
};
use crate::missions::{planned_path, MissionKind, MissionSpec};
use crate::snapshot::{read_ndjson, write_ndjson, SnapshotFull};
use crate::spoofer::{train_spoofer, SpooferBundle, SpooferConfig};
use crate::surrogate::{
    sign_agreement_pos_n, test_loss, train_surrogates, SurrogateSet, SurrogateTrainConfig,
};

use super::config::{spoofer_bundle_name, AttackConfig, ExperimentConfig};
use super::runner::{mission_seed, run_trial, AttackMode, TrialSetup};

/// Schema version shared by the stage artifact files.
pub const STAGE_SCHEMA_VERSION: u32 = 1;
/// Missions in a collection campaign.
pub const COLLECT_MISSIONS: usize = 20;
/// How many of those go to the training split (the rest are held out).
pub const COLLECT_TRAIN_SPLIT: usize = 12;
/// Calibration never uses fewer nominal trials than this.
pub const MIN_CALIBRATION_TRIALS: u64 = 10;
/// Samples drawn from the planned path for divergence reports.
const PLANNED_PATH_SAMPLES: usize = 1000;

// ---------------------------------------------------------------------------
// small file helpers
// ---------------------------------------------------------------------------

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn check_schema(found: u32) -> Result<()> {
    if found != STAGE_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch { expected: STAGE_SCHEMA_VERSION, found });
    }
    Ok(())
}

fn check_hash(artifact: &str, current: &str, force: bool) -> Result<()> {
    if artifact != current && !force {
        return Err(Error::ConfigHashMismatch {
            artifact: artifact.to_string(),
            current: current.to_string(),
        });
    }
    Ok(())
}

/// Timestamp sidecar — the only place wall-clock time is ever written.
pub fn write_meta(dir: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Meta {
        created_unix_s: u64,
        package_version: &'static str,
    }
    let created_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("meta.json"),
        &Meta { created_unix_s, package_version: env!("CARGO_PKG_VERSION") },
    )
}

fn trial_csv_name(trial: u64) -> String {
    format!("trial_{trial:02}.csv")
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

/// One mission of a collection campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionEntry {
    pub index: usize,
    /// Seed of the mission's random-walk waypoints and noise streams.
    pub seed: u64,
    pub file: String,
    pub snapshots: usize,
    /// "train" or "test".
    pub split: String,
}

/// Index of a snapshot dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub total_snapshots: usize,
    pub missions: Vec<MissionEntry>,
}

impl CollectManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let m: CollectManifest = read_json(&dir.join("manifest.json"))?;
        check_schema(m.schema_version)?;
        Ok(m)
    }
}

/// Run the collection campaign: [`COLLECT_MISSIONS`] random-walk missions
/// with distinct seeds, snapshots of every GPS fusion written as NDJSON,
/// and a manifest splitting the missions 12/8 into train/test.
pub fn collect(cfg: &ExperimentConfig, out: &Path) -> Result<CollectManifest> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mission = MissionSpec { kind: MissionKind::Brownian, ..cfg.mission.clone() };
    let mut missions = Vec::with_capacity(COLLECT_MISSIONS);
    let mut total = 0usize;
    for index in 0..COLLECT_MISSIONS {
        let trial = index as u64;
        let setup = TrialSetup {
            sim: &cfg.sim,
            ekf: &cfg.ekf,
            mission: &mission,
            detector: &cfg.detector,
            gains: &cfg.control,
            tau: None,
            attack: AttackMode::None,
            joseph_form: cfg.run.joseph_form,
            seed: cfg.run.seed,
            trial,
            collect_snapshots: true,
        };
        let outcome = run_trial(&setup)?;
        if let Some(why) = outcome.aborted {
            return Err(Error::EstimatorDiverged(format!(
                "collection mission {index} aborted: {why}"
            )));
        }
        let file = format!("mission_{index:02}.ndjson");
        write_ndjson(BufWriter::new(File::create(out.join(&file))?), &outcome.snapshots)?;
        total += outcome.snapshots.len();
        missions.push(MissionEntry {
            index,
            seed: mission_seed(cfg.run.seed, trial),
            file,
            snapshots: outcome.snapshots.len(),
            split: if index < COLLECT_TRAIN_SPLIT { "train" } else { "test" }.into(),
        });
    }
    let manifest = CollectManifest {
        schema_version: STAGE_SCHEMA_VERSION,
        config_hash: cfg.config_hash(),
        total_snapshots: total,
        missions,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    write_meta(out)?;
    Ok(manifest)
}

/// Load a collected dataset back as (train, test) replayable records.
pub fn load_split(dir: &Path) -> Result<(Vec<SnapshotFull>, Vec<SnapshotFull>, CollectManifest)> {
    let manifest = CollectManifest::load(dir)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in &manifest.missions {
        let f = File::open(dir.join(&entry.file))?;
        let snaps = read_ndjson(BufReader::new(f))?;
        let target = if entry.split == "train" { &mut train } else { &mut test };
        target.extend(snaps.into_iter().map(|s| s.full));
    }
    Ok((train, test, manifest))
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Summary of the calibration campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub trials: u64,
    pub samples_per_axis: Vec<usize>,
    /// Fraction of calibration samples outside the calibration band, per
    /// axis (measured on the same samples the band was fit to).
    pub cal_fpr_per_axis: Vec<f64>,
    /// Mean over trials of the mean horizontal estimation error.
    pub mean_eps: f64,
    pub max_eps: f64,
    /// Nominal trials in which the innovation gate fired at least once.
    pub chi2_alarm_trials: usize,
    /// Nominal trials in which the debounced band detector fired (always
    /// from re-running the bands over the calibration trials).
    pub tau_alarm_trials: usize,
}

/// Persisted band-detector calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub thresholds: TauThresholds,
    pub calibration: CalibrationStats,
}

impl TauFile {
    pub fn load(path: &Path) -> Result<Self> {
        let t: TauFile = read_json(path)?;
        check_schema(t.schema_version)?;
        Ok(t)
    }

    /// Load thresholds for deployment against a specific configuration.
    pub fn deploy(path: &Path, current_hash: &str, force: bool) -> Result<TauThresholds> {
        let t = TauFile::load(path)?;
        check_hash(&t.config_hash, current_hash, force)?;
        Ok(t.thresholds)
    }
}

/// Calibrate the residual-band detector from nominal trials of the
/// configured mission (at least [`MIN_CALIBRATION_TRIALS`]); writes
/// `tau.json`.
pub fn calibrate(cfg: &ExperimentConfig, out: &Path) -> Result<TauFile> {
    cfg.validate()?;
    ensure_dir(out)?;
    let trials = cfg.run.trials.max(MIN_CALIBRATION_TRIALS);
    let n_axes = cfg.detector.monitored_axes.len();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); n_axes];
    let mut eps_means = Vec::new();
    let mut max_eps = 0.0f64;
    let mut chi2_alarm_trials = 0usize;
    let mut logs = Vec::new();
    for trial in 0..trials {
        let setup = TrialSetup {
            sim: &cfg.sim,
            ekf: &cfg.ekf,
            mission: &cfg.mission,
            detector: &cfg.detector,
            gains: &cfg.control,
            tau: None,
            attack: AttackMode::None,
            joseph_form: cfg.run.joseph_form,
            seed: cfg.run.seed,
            trial,
            collect_snapshots: false,
        };
        let outcome = run_trial(&setup)?;
        if let Some(why) = outcome.aborted {
            return Err(Error::EstimatorDiverged(format!(
                "calibration trial {trial} aborted: {why}"
            )));
        }
        for (axis, vals) in outcome.residuals_by_axis.iter().enumerate() {
            samples[axis].extend_from_slice(vals);
        }
        let m = compute_metrics(&outcome.log);
        eps_means.push(m.eps_mean);
        max_eps = max_eps.max(m.eps_max);
        if m.chi2_first_alarm.is_some() {
            chi2_alarm_trials += 1;
        }
        logs.push(outcome);
    }
    let thresholds = calibrate_tau(&samples, &cfg.detector)?;

    // Re-run the freshly calibrated detector over the calibration trials to
    // count debounced false alarms.
    let mut tau_alarm_trials = 0usize;
    for outcome in &logs {
        let mut monitor =
            crate::anomaly::TauMonitor::new(thresholds.clone(), cfg.detector.consec_required);
        let n = outcome.residuals_by_axis[0].len();
        let mut fired = false;
        for i in 0..n {
            let mut r = crate::ekf::MeasVec::zeros();
            for (j, &axis) in cfg.detector.monitored_axes.iter().enumerate() {
                r[axis] = outcome.residuals_by_axis[j][i];
            }
            if monitor.step(&r).alarm {
                fired = true;
            }
        }
        if fired {
            tau_alarm_trials += 1;
        }
    }

    let calibration = CalibrationStats {
        trials,
        samples_per_axis: samples.iter().map(Vec::len).collect(),
        cal_fpr_per_axis: samples
            .iter()
            .zip(&thresholds.bands)
            .map(|(s, b)| calibration_fpr(s, b))
            .collect(),
        mean_eps: eps_means.iter().sum::<f64>() / eps_means.len() as f64,
        max_eps,
        chi2_alarm_trials,
        tau_alarm_trials,
    };
    let file = TauFile {
        schema_version: STAGE_SCHEMA_VERSION,
        config_hash: cfg.config_hash(),
        thresholds,
        calibration,
    };
    write_json(&out.join("tau.json"), &file)?;
    write_meta(out)?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// train-surrogate
// ---------------------------------------------------------------------------

/// Summary manifest of a surrogate training stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_snapshots: usize,
    pub test_snapshots: usize,
    /// Held-out raw-unit MSE per slice before any training.
    pub epoch0_test_loss: [f64; 3],
    /// Held-out raw-unit MSE per slice after training.
    pub final_test_loss: [f64; 3],
    /// Fraction of held-out fusions whose north-position residual sign the
    /// first slice predicts correctly.
    pub sign_agreement_pos_n: f64,
}

impl SurrogateManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let m: SurrogateManifest = read_json(&dir.join("surrogate_manifest.json"))?;
        check_schema(m.schema_version)?;
        Ok(m)
    }
}

/// Train the three-slice surrogate on a collected dataset; writes the three
/// model files, `curves.csv`, and `surrogate_manifest.json`.
pub fn train_surrogate_stage(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
    tcfg: &SurrogateTrainConfig,
    force: bool,
) -> Result<SurrogateManifest> {
    cfg.validate()?;
    ensure_dir(out)?;
    let (train, test, collect_manifest) = load_split(data)?;
    check_hash(&collect_manifest.config_hash, &cfg.config_hash(), force)?;
    let (set, curves) = train_surrogates(&train, &test, tcfg)?;
    set.save_dir(out)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("curves.csv"))?));
    for c in &curves {
        w.serialize(c)?;
    }
    w.flush()?;
    drop(w);

    let mut epoch0 = [f64::NAN; 3];
    for (i, slice) in ["d1", "d2", "d3"].iter().enumerate() {
        if let Some(c) = curves.iter().find(|c| c.slice == *slice && c.epoch == 0) {
            epoch0[i] = c.test_loss;
        }
    }
    let manifest = SurrogateManifest {
        schema_version: STAGE_SCHEMA_VERSION,
        config_hash: cfg.config_hash(),
        seed: tcfg.seed,
        epochs: tcfg.epochs,
        train_snapshots: train.len(),
        test_snapshots: test.len(),
        epoch0_test_loss: epoch0,
        final_test_loss: test_loss(&set, &test, tcfg.joseph_form)?,
        sign_agreement_pos_n: sign_agreement_pos_n(&set, &test, tcfg.joseph_form)?,
    };
    write_json(&out.join("surrogate_manifest.json"), &manifest)?;
    write_meta(out)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train-spoofer
// ---------------------------------------------------------------------------

/// Adversarially train an injection generator against a trained surrogate;
/// writes the bundle and its training curve, returns the bundle path.
pub fn train_spoofer_stage(
    cfg: &ExperimentConfig,
    data: &Path,
    surrogate_dir: &Path,
    scfg: &SpooferConfig,
    out: &Path,
    force: bool,
) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let hash = cfg.config_hash();
    let (train, _test, collect_manifest) = load_split(data)?;
    check_hash(&collect_manifest.config_hash, &hash, force)?;
    let surrogate_manifest = SurrogateManifest::load(surrogate_dir)?;
    check_hash(&surrogate_manifest.config_hash, &hash, force)?;
    let set = SurrogateSet::load_dir(surrogate_dir)?;

    let (g, curve) = train_spoofer(&train, &set, scfg)?;
    let bundle = SpooferBundle::new(g, scfg, hash);
    let path = out.join(spoofer_bundle_name(scfg.kind));
    bundle.save(&path)?;

    let curve_path = out.join(format!("spoofer_{}_curve.csv", scfg.kind));
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(curve_path)?));
    for c in &curve {
        w.serialize(c)?;
    }
    w.flush()?;
    drop(w);
    write_meta(out)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// One trial's outcome inside a run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u64,
    pub aborted: Option<String>,
    pub metrics: RunMetrics,
}

/// Flat per-trial row for `report.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrialRow {
    trial: u64,
    status_chi2: StealthStatus,
    deviation_chi2: f64,
    first_alarm_chi2: Option<f64>,
    status_tau: StealthStatus,
    deviation_tau: f64,
    first_alarm_tau: Option<f64>,
    eps_mean: f64,
    eps_max: f64,
    run_end: f64,
    stealth_time_chi2: Option<f64>,
    stealth_time_tau: Option<f64>,
    aborted: Option<String>,
}

/// Aggregate report of one experiment (several trials of one config).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub mission: String,
    pub attack: String,
    pub trials: u64,
    pub seed: u64,
    pub aggregate_chi2: AggregateMark,
    pub aggregate_tau: AggregateMark,
    /// Mean over trials of the mean horizontal estimation error.
    pub mean_eps: f64,
    /// Mean over trials of the pre-alarm deviation, per detector.
    pub mean_deviation_chi2: f64,
    pub mean_deviation_tau: f64,
    pub per_trial: Vec<TrialReport>,
    /// The exact configuration the experiment ran with.
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let r: RunReport = read_json(&dir.join("report.json"))?;
        check_schema(r.schema_version)?;
        Ok(r)
    }
}

/// Execute the configured experiment: `trials` closed-loop repetitions,
/// per-tick CSV logs, and `report.json` / `report.csv`.
pub fn run_stage(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<RunReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let hash = cfg.config_hash();
    let tau = match &cfg.run.tau_thresholds {
        Some(path) => Some(TauFile::deploy(path, &hash, force)?),
        None => None,
    };
    // Keep a loaded spoofer bundle alive for the duration of the run.
    let bundle = match &cfg.attack {
        AttackConfig::Spoofer { bundle, .. } => {
            let b = SpooferBundle::load(bundle)?;
            b.check_config(&hash, force)?;
            Some(b)
        }
        _ => None,
    };

    let mut per_trial = Vec::with_capacity(cfg.run.trials as usize);
    for trial in 0..cfg.run.trials {
        let attack = match (&cfg.attack, &bundle) {
            (AttackConfig::None, _) => AttackMode::None,
            (AttackConfig::Naive { naive, start }, _) => {
                AttackMode::Naive { kind: *naive, start: *start }
            }
            (AttackConfig::Spoofer { start, .. }, Some(b)) => {
                AttackMode::Spoofer { g: &b.g, kind: b.kind, start: *start }
            }
            (AttackConfig::Spoofer { .. }, None) => unreachable!("bundle loaded above"),
        };
        let setup = TrialSetup {
            sim: &cfg.sim,
            ekf: &cfg.ekf,
            mission: &cfg.mission,
            detector: &cfg.detector,
            gains: &cfg.control,
            tau: tau.as_ref(),
            attack,
            joseph_form: cfg.run.joseph_form,
            seed: cfg.run.seed,
            trial,
            collect_snapshots: false,
        };
        let outcome = run_trial(&setup)?;
        if outcome.log.ticks.is_empty() {
            return Err(Error::EstimatorDiverged(format!(
                "trial {trial} produced no ticks: {}",
                outcome.aborted.unwrap_or_default()
            )));
        }
        let f = BufWriter::new(File::create(out.join(trial_csv_name(trial)))?);
        write_ticks_csv(f, &outcome.log.ticks)?;
        per_trial.push(TrialReport {
            trial,
            aborted: outcome.aborted,
            metrics: compute_metrics(&outcome.log),
        });
    }

    let statuses_chi2: Vec<StealthStatus> =
        per_trial.iter().map(|t| t.metrics.status_chi2).collect();
    let statuses_tau: Vec<StealthStatus> = per_trial.iter().map(|t| t.metrics.status_tau).collect();
    let n = per_trial.len() as f64;
    let report = RunReport {
        schema_version: STAGE_SCHEMA_VERSION,
        config_hash: hash,
        mission: cfg.mission.kind.to_string(),
        attack: cfg.attack.label(),
        trials: cfg.run.trials,
        seed: cfg.run.seed,
        aggregate_chi2: aggregate_status(&statuses_chi2),
        aggregate_tau: aggregate_status(&statuses_tau),
        mean_eps: per_trial.iter().map(|t| t.metrics.eps_mean).sum::<f64>() / n,
        mean_deviation_chi2: per_trial.iter().map(|t| t.metrics.deviation_chi2).sum::<f64>() / n,
        mean_deviation_tau: per_trial.iter().map(|t| t.metrics.deviation_tau).sum::<f64>() / n,
        per_trial,
        config: cfg.clone(),
    };
    write_json(&out.join("report.json"), &report)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("report.csv"))?));
    for t in &report.per_trial {
        let m = &t.metrics;
        w.serialize(TrialRow {
            trial: t.trial,
            status_chi2: m.status_chi2,
            deviation_chi2: m.deviation_chi2,
            first_alarm_chi2: m.chi2_first_alarm,
            status_tau: m.status_tau,
            deviation_tau: m.deviation_tau,
            first_alarm_tau: m.tau_first_alarm,
            eps_mean: m.eps_mean,
            eps_max: m.eps_max,
            run_end: m.run_end,
            stealth_time_chi2: m.stealth_time_chi2,
            stealth_time_tau: m.stealth_time_tau,
            aborted: t.aborted.clone(),
        })?;
    }
    w.flush()?;
    drop(w);
    write_meta(out)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// One experiment's row in the aggregate table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dir: String,
    pub mission: String,
    pub attack: String,
    pub trials: u64,
    pub mark_chi2: AggregateMark,
    pub mark_tau: AggregateMark,
    pub mean_eps: f64,
    pub mean_deviation_chi2: f64,
    pub mean_deviation_tau: f64,
}

/// Trajectory-shape divergence verdict for one attacked trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TbdSummary {
    pub run: String,
    pub trial: u64,
    pub components: usize,
    pub nominal_band_max: f64,
    pub pov_median: f64,
    pub attack_median: f64,
    pub pov_within_band: bool,
    pub attack_exceeds_band: bool,
    /// Boxplot dataset for this trial, relative to the report directory.
    pub csv: String,
}

/// Cross-experiment aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub rows: Vec<AggregateRow>,
    pub tbd: Vec<TbdSummary>,
}

impl AggregateReport {
    pub fn load(dir: &Path) -> Result<Self> {
        let r: AggregateReport = read_json(&dir.join("aggregate.json"))?;
        check_schema(r.schema_version)?;
        Ok(r)
    }
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load_trial_ticks(dir: &Path, trial: u64) -> Result<Vec<crate::metrics::TickRecord>> {
    let f = File::open(dir.join(trial_csv_name(trial)))?;
    read_ticks_csv(BufReader::new(f))
}

/// Aggregate several run directories into one table; when a nominal run
/// directory is supplied, also emit trajectory-shape divergence datasets for
/// every attacked trial (planned vs normal vs true-attack vs system POV).
pub fn report_stage(
    runs: &[PathBuf],
    nominal: Option<&Path>,
    out: &Path,
) -> Result<AggregateReport> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for dir in runs {
        let rep = RunReport::load(dir)?;
        rows.push(AggregateRow {
            dir: dir_label(dir),
            mission: rep.mission.clone(),
            attack: rep.attack.clone(),
            trials: rep.trials,
            mark_chi2: rep.aggregate_chi2,
            mark_tau: rep.aggregate_tau,
            mean_eps: rep.mean_eps,
            mean_deviation_chi2: rep.mean_deviation_chi2,
            mean_deviation_tau: rep.mean_deviation_tau,
        });
        reports.push((dir.clone(), rep));
    }

    let mut tbd = Vec::new();
    if let Some(nominal_dir) = nominal {
        let nominal_rep = RunReport::load(nominal_dir)?;
        let mut normals = Vec::new();
        for trial in 0..nominal_rep.trials {
            normals.push(true_ne(&load_trial_ticks(nominal_dir, trial)?));
        }
        ensure_dir(&out.join("tbd"))?;
        for (dir, rep) in &reports {
            if rep.attack == "none" {
                continue;
            }
            if rep.mission != nominal_rep.mission {
                return Err(Error::Config(format!(
                    "nominal mission '{}' does not match '{}' of {}",
                    nominal_rep.mission,
                    rep.mission,
                    dir.display()
                )));
            }
            for trial in 0..rep.trials {
                let ticks = load_trial_ticks(dir, trial)?;
                // The commanded path actually flown this trial doubles as a
                // consistency check on the ideal mission geometry.
                let _ = setpoint_ne(&ticks);
                let planned = planned_path(
                    &rep.config.mission,
                    mission_seed(rep.config.run.seed, trial),
                    PLANNED_PATH_SAMPLES,
                );
                let divergence = tbd_report(
                    &planned,
                    &normals,
                    &est_ne(&ticks),
                    &true_ne(&ticks),
                    rep.config.run.seed,
                )?;
                let csv_rel = format!("tbd/{}_trial_{trial:02}.csv", dir_label(dir));
                write_tsl_csv(
                    BufWriter::new(File::create(out.join(&csv_rel))?),
                    &divergence.rows,
                )?;
                tbd.push(TbdSummary {
                    run: dir_label(dir),
                    trial,
                    components: divergence.components,
                    nominal_band_max: divergence.nominal_band_max,
                    pov_median: divergence.pov_median,
                    attack_median: divergence.attack_median,
                    pov_within_band: divergence.pov_within_band,
                    attack_exceeds_band: divergence.attack_exceeds_band,
                    csv: csv_rel,
                });
            }
        }
    }

    let report = AggregateReport { schema_version: STAGE_SCHEMA_VERSION, rows, tbd };
    write_json(&out.join("aggregate.json"), &report)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("aggregate.csv"))?));
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    drop(w);
    write_meta(out)?;
    Ok(report)
}
