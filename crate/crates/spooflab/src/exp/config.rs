//! Experiment configuration: one TOML file describes the plant, the filter,
//! the mission, the detectors, the attack, and the run bookkeeping.
//!
//! The plant and filter sections are hashed (SHA-256 over their canonical
//! JSON) into every artifact this workspace emits; trained bundles and
//! calibrated thresholds refuse to deploy against a different hash unless
//! explicitly forced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::DetectorConfig;
use crate::attacks::NaiveKind;
use crate::control::ControllerGains;
use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::missions::MissionSpec;
use crate::sim::SimConfig;
use crate::spoofer::SpooferKind;

/// Default attack window start, seconds into the run; sits just past the
/// detector warm-up so attacked fixes face an armed band detector.
pub const DEFAULT_ATTACK_START_S: f64 = 27.0;

fn default_attack_start() -> f64 {
    DEFAULT_ATTACK_START_S
}

/// What, if anything, tampers with the GPS feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    /// Clean run.
    None,
    /// One of the six hand-crafted baselines.
    Naive {
        naive: NaiveKind,
        #[serde(default = "default_attack_start")]
        start: f64,
    },
    /// A trained spoofer bundle.
    Spoofer {
        bundle: PathBuf,
        #[serde(default = "default_attack_start")]
        start: f64,
    },
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::None
    }
}

impl AttackConfig {
    /// Short label used in logs and reports.
    pub fn label(&self) -> String {
        match self {
            AttackConfig::None => "none".into(),
            AttackConfig::Naive { naive, .. } => naive.to_string(),
            AttackConfig::Spoofer { bundle, .. } => bundle
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "spoofer".into()),
        }
    }

    pub fn start(&self) -> Option<f64> {
        match self {
            AttackConfig::None => None,
            AttackConfig::Naive { start, .. } | AttackConfig::Spoofer { start, .. } => Some(*start),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(start) = self.start() {
            if !(start >= 0.0 && start.is_finite()) {
                return Err(Error::Config(format!(
                    "attack.start must be finite and >= 0, got {start}"
                )));
            }
        }
        Ok(())
    }
}

/// Run bookkeeping: seeds, repetition, artifact paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Independent repetitions of the experiment.
    pub trials: u64,
    /// Base seed; trial index is mixed in per repetition.
    pub seed: u64,
    /// Output directory (CLI --out overrides).
    pub out: PathBuf,
    /// Calibrated band-detector thresholds; runs without the band detector
    /// when absent.
    pub tau_thresholds: Option<PathBuf>,
    /// Use the numerically symmetric covariance update in the filter.
    pub joseph_form: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trials: 10,
            seed: 0,
            out: PathBuf::from("out"),
            tau_thresholds: None,
            joseph_form: false,
        }
    }
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub ekf: EkfConfig,
    pub mission: MissionSpec,
    pub detector: DetectorConfig,
    pub control: ControllerGains,
    pub attack: AttackConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Parse and validate a TOML experiment file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.ekf.validate()?;
        self.mission.validate()?;
        self.detector.validate()?;
        self.control.validate()?;
        self.attack.validate()?;
        if self.run.trials == 0 {
            return Err(Error::Config("run.trials must be >= 1".into()));
        }
        Ok(())
    }

    /// Hash of the plant + filter sections; recorded in every artifact.
    pub fn config_hash(&self) -> String {
        config_hash(&self.sim, &self.ekf)
    }
}

/// SHA-256 over the canonical JSON of the plant and filter configuration.
pub fn config_hash(sim: &SimConfig, ekf: &EkfConfig) -> String {
    let canonical =
        serde_json::to_string(&(sim, ekf)).expect("plant/filter configs always serialize");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Spoofer kinds paired with their conventional bundle file names.
pub fn spoofer_bundle_name(kind: SpooferKind) -> String {
    format!("spoofer_{kind}.json")
}
