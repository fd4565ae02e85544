//! Residual-based anomaly detectors guarding the navigation filter.
//!
//! Two detectors watch the GPS update residuals:
//!
//! * **Normalized innovation test (chi-square)** — the classic gate
//!   `r' C^-1 r / eta`, where `C` is the filter's innovation covariance and
//!   `eta` a fixed threshold. Because `C` is built from the *reported*
//!   receiver accuracies, an attacker who keeps residuals small relative to
//!   the reported noise floor sails straight through.
//! * **Per-axis residual band (tau)** — an empirical band calibrated from
//!   nominal residual samples of the same mission: samples beyond two
//!   standard deviations of the mean are trimmed, then the 2.5th/97.5th
//!   percentiles of the remainder form the band `[tau_min, tau_max]`. Every
//!   GPS update is checked independently; the verdict alarms when any
//!   monitored axis falls on or outside its band. Run-level quantities
//!   ("first alarm", "stealthy window") are derived downstream from the
//!   per-update verdicts.
//!
//! Because trimming pulls the percentiles inward, a correctly calibrated
//! band flags roughly 9% of fresh nominal per-axis samples; that nominal
//! false-positive rate is a property of the procedure, not a bug, and is
//! tracked as a health statistic.
//!
//! Band boundaries are inclusive: a residual exactly at the edge counts as
//! an exceedance.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::ekf::{MeasMat, MeasVec, RES_POS_N, RES_VEL_N};
use crate::error::{Error, Result};

/// Detector parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Chi-square gate threshold (alarm when `r' C^-1 r >= eta`).
    pub eta: f64,
    /// Residual indices watched by the band detector.
    pub monitored_axes: Vec<usize>,
    /// Settling time before residuals count for calibration, false-positive
    /// statistics, or alarms, seconds. At the default 1 Hz GPS cadence the
    /// filter needs ~20 updates before its residual spread is stationary;
    /// earlier samples would be trimmed out of calibration and then read as
    /// permanent early-run exceedances.
    pub warmup_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            eta: 5.0,
            monitored_axes: vec![RES_VEL_N, RES_POS_N],
            warmup_s: 25.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("detector.eta must be positive, got {}", self.eta)));
        }
        if self.monitored_axes.is_empty() {
            return Err(Error::Config("detector.monitored_axes must not be empty".into()));
        }
        if let Some(&ax) = self.monitored_axes.iter().find(|&&a| a >= crate::ekf::NMEAS) {
            return Err(Error::Config(format!("detector.monitored_axes index {ax} out of range")));
        }
        if !(self.warmup_s.is_finite() && self.warmup_s >= 0.0) {
            return Err(Error::Config("detector.warmup_s must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Normalized innovation score `r' C^-1 r / eta`; alarm at `score >= 1`.
pub fn chi2_score(residual: &MeasVec, innov_cov: &MeasMat, eta: f64) -> Result<f64> {
    let chol = Cholesky::new(*innov_cov)
        .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
    let w = chol.solve(residual);
    Ok(residual.dot(&w) / eta)
}

/// Calibrated residual band for one monitored axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBand {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl TauBand {
    /// Inclusive exceedance test: `v` on or outside the band.
    pub fn exceeds(&self, v: f64) -> bool {
        v <= self.tau_min || v >= self.tau_max
    }
}

/// Full band-detector calibration: one band per monitored axis, in the order
/// of `DetectorConfig::monitored_axes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauThresholds {
    pub axes: Vec<usize>,
    pub bands: Vec<TauBand>,
}

impl TauThresholds {
    pub fn band_for(&self, axis: usize) -> Option<&TauBand> {
        self.axes.iter().position(|&a| a == axis).map(|i| &self.bands[i])
    }

    /// Per-axis exceedance flags for one residual, in `axes` order.
    pub fn exceedances(&self, residual: &MeasVec) -> Vec<bool> {
        self.axes
            .iter()
            .zip(&self.bands)
            .map(|(&axis, band)| band.exceeds(residual[axis]))
            .collect()
    }
}

/// Per-update band-detector verdict for one GPS update.
#[derive(Debug, Clone, PartialEq)]
pub struct TauVerdict {
    /// Band exceedance per monitored axis, in `TauThresholds::axes` order.
    pub exceeded: Vec<bool>,
    /// Alarm: some monitored axis is on or outside its band.
    pub alarm: bool,
}

/// Check one GPS-update residual against the calibrated bands. Stateless:
/// each update gets an independent verdict.
pub fn tau_check(residual: &MeasVec, thresholds: &TauThresholds) -> TauVerdict {
    let exceeded = thresholds.exceedances(residual);
    let alarm = exceeded.iter().any(|&e| e);
    TauVerdict { exceeded, alarm }
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let rank = (n - 1) as f64 * p / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Calibrate one axis band from nominal residual samples.
///
/// Procedure: compute the sample mean and standard deviation, discard
/// samples farther than two standard deviations from the mean, then take the
/// 2.5th/97.5th percentiles of the surviving samples as `[tau_min, tau_max]`.
pub fn calibrate_band(samples: &[f64]) -> Result<TauBand> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "band calibration needs at least 100 residual samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd.is_finite() && sd > 0.0) {
        return Err(Error::InsufficientData("residual samples are degenerate (zero spread)".into()));
    }
    let mut kept: Vec<f64> =
        samples.iter().copied().filter(|v| (v - mean).abs() <= 2.0 * sd).collect();
    if kept.len() < 100 {
        return Err(Error::InsufficientData("too few residual samples survive trimming".into()));
    }
    kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(TauBand { tau_min: percentile(&kept, 2.5), tau_max: percentile(&kept, 97.5) })
}

/// Calibrate bands for every monitored axis from per-axis sample columns.
///
/// `samples_by_axis[i]` holds the nominal residual samples of
/// `cfg.monitored_axes[i]`.
pub fn calibrate_tau(samples_by_axis: &[Vec<f64>], cfg: &DetectorConfig) -> Result<TauThresholds> {
    cfg.validate()?;
    if samples_by_axis.len() != cfg.monitored_axes.len() {
        return Err(Error::Config(format!(
            "expected {} sample columns, got {}",
            cfg.monitored_axes.len(),
            samples_by_axis.len()
        )));
    }
    let bands =
        samples_by_axis.iter().map(|col| calibrate_band(col)).collect::<Result<Vec<_>>>()?;
    Ok(TauThresholds { axes: cfg.monitored_axes.clone(), bands })
}

/// Fraction of samples on or outside the band: the per-axis
/// false-positive-rate statistic when fed fresh nominal data.
pub fn band_fpr(samples: &[f64], band: &TauBand) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples.iter().filter(|&&v| band.exceeds(v)).count();
    hits as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix6, Vector6};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn chi2_score_matches_quadratic_form() {
        // Diagonal C: score = sum(r_i^2 / c_i) / eta, hand-computable.
        let mut c = Matrix6::zeros();
        for i in 0..6 {
            c[(i, i)] = (i + 1) as f64 * 0.1;
        }
        let r = Vector6::new(0.1, -0.2, 0.3, 0.0, 0.05, -0.1);
        let expect: f64 = (0..6).map(|i| r[i] * r[i] / c[(i, i)]).sum::<f64>() / 5.0;
        let got = chi2_score(&r, &c, 5.0).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn chi2_zero_residual_scores_zero_and_unit_vector_scores_one_fifth() {
        let c = Matrix6::identity();
        assert_relative_eq!(chi2_score(&Vector6::zeros(), &c, 5.0).unwrap(), 0.0);
        let mut r = Vector6::zeros();
        r[2] = 1.0;
        assert_relative_eq!(chi2_score(&r, &c, 5.0).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn chi2_rejects_indefinite_covariance() {
        let mut c = Matrix6::identity();
        c[(0, 0)] = -1.0;
        assert!(chi2_score(&Vector6::zeros(), &c, 5.0).is_err());
    }

    #[test]
    fn unit_normal_calibration_band_matches_analytic_value() {
        // Oracle (frozen): for N(0,1) samples, trimming beyond 2 sigma and
        // taking the 2.5/97.5 percentiles of the trimmed set converges to
        // +/- z where Phi(z) = Phi(-2) + 0.975*(Phi(2) - Phi(-2)), i.e.
        // z = 1.67862. Verified against a direct numerical inversion of the
        // normal CDF, independent of this implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..200_000).map(|_| dist.sample(&mut rng)).collect();
        let band = calibrate_band(&samples).unwrap();
        assert_relative_eq!(band.tau_max, 1.67862, epsilon = 0.02);
        assert_relative_eq!(band.tau_min, -1.67862, epsilon = 0.02);
    }

    #[test]
    fn fresh_data_fpr_lands_in_the_expected_range() {
        // Because trimming tightens the band past the nominal 5% tails, the
        // fresh-sample exceedance rate is ~9.3% for Gaussian residuals —
        // comfortably inside the 2..15% acceptance window.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let cal: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let fresh: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let band = calibrate_band(&cal).unwrap();
        let fpr = band_fpr(&fresh, &band);
        assert!((0.08..0.11).contains(&fpr), "fpr {fpr}");
        assert!((0.02..0.15).contains(&fpr));
    }

    #[test]
    fn band_scales_and_centers_follow_the_data() {
        // Residuals ~ N(3, 0.5^2): band must recenter near 3 and scale by 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Normal::new(3.0, 0.5).unwrap();
        let samples: Vec<f64> = (0..200_000).map(|_| dist.sample(&mut rng)).collect();
        let band = calibrate_band(&samples).unwrap();
        assert_relative_eq!(band.tau_max, 3.0 + 0.5 * 1.67862, epsilon = 0.02);
        assert_relative_eq!(band.tau_min, 3.0 - 0.5 * 1.67862, epsilon = 0.02);
    }

    #[test]
    fn boundary_values_are_inclusive() {
        let band = TauBand { tau_min: -1.0, tau_max: 1.0 };
        assert!(band.exceeds(1.0));
        assert!(band.exceeds(-1.0));
        assert!(!band.exceeds(0.999_999));
        assert!(band.exceeds(1.000_001));
    }

    #[test]
    fn tau_check_alarms_on_any_monitored_axis_and_ignores_the_rest() {
        let band = TauBand { tau_min: -1.0, tau_max: 1.0 };
        let th = TauThresholds { axes: vec![0, 3], bands: vec![band, band] };
        let mut r = Vector6::zeros();
        assert!(!tau_check(&r, &th).alarm, "inside both bands");
        r[0] = 3.0;
        let v = tau_check(&r, &th);
        assert!(v.alarm, "axis 0 exceeds");
        assert_eq!(v.exceeded, vec![true, false]);
        r[0] = 0.0;
        r[3] = -1.0;
        assert!(tau_check(&r, &th).alarm, "boundary on axis 3 alarms");
        // Unmonitored axes never flip the verdict.
        r[3] = 0.0;
        r[1] = 100.0;
        r[5] = -100.0;
        assert!(!tau_check(&r, &th).alarm);
    }

    #[test]
    fn per_update_verdicts_are_independent() {
        // No latching or debouncing: an exceedance followed by a clean
        // update yields alarm then no alarm.
        let band = TauBand { tau_min: -1.0, tau_max: 1.0 };
        let th = TauThresholds { axes: vec![0], bands: vec![band] };
        let mut r = Vector6::zeros();
        r[0] = 3.0;
        assert!(tau_check(&r, &th).alarm);
        r[0] = 0.0;
        assert!(!tau_check(&r, &th).alarm);
        r[0] = 3.0;
        assert!(tau_check(&r, &th).alarm);
    }

    #[test]
    fn calibration_errors_on_degenerate_input() {
        assert!(calibrate_band(&[0.0; 300]).is_err());
        assert!(calibrate_band(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn thresholds_serialize_round_trip() {
        let band = TauBand { tau_min: -0.07, tau_max: 0.071 };
        let th = TauThresholds { axes: vec![0, 3], bands: vec![band, band] };
        let json = serde_json::to_string(&th).unwrap();
        let back: TauThresholds = serde_json::from_str(&json).unwrap();
        assert_eq!(th, back);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let mut c = DetectorConfig::default();
        c.eta = 0.0;
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.monitored_axes = vec![9];
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.warmup_s = f64::NAN;
        assert!(c.validate().is_err());
    }
}
