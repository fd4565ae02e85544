//! Trajectory-shape divergence between mixture summaries.
//!
//! Two trajectories are compared by fitting each with a Gaussian mixture and
//! evaluating a normalized squared divergence built from pairwise Gaussian
//! overlap integrals. Because mixture fitting is seed-dependent, reports
//! refit each trajectory several times and publish the full distribution
//! (boxplot rows plus quartiles) rather than a single number.

use serde::{Deserialize, Serialize};

use crate::anomaly::percentile;
use crate::error::{Error, Result};
use crate::metrics::gmm::{
    distinct_points, fit_gmm, subsample_even, GmmModel, DEFAULT_COMPONENTS, MAX_FIT_POINTS,
};
use crate::metrics::TickRecord;

/// Normalizer constant in the divergence denominator.
pub const TSL_C: f64 = 1.0;
/// How many independently seeded fits a report performs per trajectory.
pub const REPORT_FITS: usize = 10;

/// Bivariate normal density evaluated at the origin: N(0; mean, cov).
pub fn density_at_origin(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<f64> {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Numerical(
            "singular covariance sum in trajectory divergence".into(),
        ));
    }
    let q = (cov[1][1] * mean[0] * mean[0] - (cov[0][1] + cov[1][0]) * mean[0] * mean[1]
        + cov[0][0] * mean[1] * mean[1])
        / det;
    Ok((-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
}

/// Cross term between two mixtures with components paired by index:
/// sum_i a_i^r a_i^q N(0; mu_i^r - mu_i^q, S_i^r + S_i^q).
pub fn pair_divergence(r: &GmmModel, q: &GmmModel) -> Result<f64> {
    if r.k() != q.k() {
        return Err(Error::Config(format!(
            "mixture component counts differ: {} vs {}",
            r.k(),
            q.k()
        )));
    }
    let mut d = 0.0;
    for i in 0..r.k() {
        let mean = [r.means[i][0] - q.means[i][0], r.means[i][1] - q.means[i][1]];
        let mut cov = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] = r.covs[i][a][b] + q.covs[i][a][b];
            }
        }
        d += r.weights[i] * q.weights[i] * density_at_origin(mean, cov)?;
    }
    Ok(d)
}

/// Normalized squared divergence of trajectory mixture `r` from reference
/// mixture `q`: (d_rr + d_qq - 2 d_rq) / sqrt(c + 4 d_qq).
///
/// Identical mixtures score exactly zero; values are not guaranteed
/// non-negative in general, but grow monotonically as one mixture is
/// translated away from the other.
pub fn tsl_with_c(r: &GmmModel, q: &GmmModel, c: f64) -> Result<f64> {
    let d_rr = pair_divergence(r, r)?;
    let d_qq = pair_divergence(q, q)?;
    let d_rq = pair_divergence(r, q)?;
    Ok((d_rr + d_qq - 2.0 * d_rq) / (c + 4.0 * d_qq).sqrt())
}

/// [`tsl_with_c`] with the default normalizer [`TSL_C`].
pub fn tsl(r: &GmmModel, q: &GmmModel) -> Result<f64> {
    tsl_with_c(r, q, TSL_C)
}

/// Largest component count every trajectory can support (each fit needs
/// ten points per component and at least `k` distinct points after
/// subsampling), capped at `k_max` and floored at one.
pub fn k_common(trajectories: &[&[[f64; 2]]], k_max: usize) -> usize {
    let mut k = k_max.max(1);
    for t in trajectories {
        let sub = subsample_even(t, MAX_FIT_POINTS);
        k = k.min(distinct_points(&sub)).min(sub.len() / 10);
    }
    k.max(1)
}

/// True (ground-truth) horizontal track of a run.
pub fn true_ne(ticks: &[TickRecord]) -> Vec<[f64; 2]> {
    ticks.iter().map(|t| [t.pos_n_true, t.pos_e_true]).collect()
}

/// Horizontal track as the autopilot believes it (system point of view).
pub fn est_ne(ticks: &[TickRecord]) -> Vec<[f64; 2]> {
    ticks.iter().map(|t| [t.pos_n_est, t.pos_e_est]).collect()
}

/// Commanded (planned) horizontal track.
pub fn setpoint_ne(ticks: &[TickRecord]) -> Vec<[f64; 2]> {
    ticks.iter().map(|t| [t.sp_pos_n, t.sp_pos_e]).collect()
}

/// One boxplot observation: a trajectory role scored against the planned
/// trajectory under one fit seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TslRow {
    pub role: String,
    pub seed: u64,
    pub tsl: f64,
}

/// Five-number summary of one role's divergence distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleQuartiles {
    pub role: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Shape-divergence report comparing normal, attacked-true, and
/// system-point-of-view trajectories against the planned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Mixture size shared by all fits in this report.
    pub components: usize,
    /// Largest normal-vs-planned divergence observed; the "looks normal"
    /// band is [min observed, this].
    pub nominal_band_max: f64,
    pub pov_median: f64,
    pub attack_median: f64,
    /// Median system-POV divergence does not exceed the nominal band.
    pub pov_within_band: bool,
    /// Median true-attack-trajectory divergence exceeds the nominal band.
    pub attack_exceeds_band: bool,
    pub rows: Vec<TslRow>,
    pub quartiles: Vec<RoleQuartiles>,
}

fn quartiles_for(role: &str, rows: &[TslRow]) -> RoleQuartiles {
    let mut vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.role == role)
        .map(|r| r.tsl)
        .collect();
    vals.sort_by(f64::total_cmp);
    RoleQuartiles {
        role: role.to_string(),
        min: vals[0],
        q1: percentile(&vals, 25.0),
        median: percentile(&vals, 50.0),
        q3: percentile(&vals, 75.0),
        max: vals[vals.len() - 1],
    }
}

/// Build the divergence report.
///
/// Every trajectory is refit [`REPORT_FITS`] times with seeds
/// `base_seed + j`, always scored against the same-seed fit of the planned
/// trajectory. The nominal band comes from the normal-vs-planned rows; a
/// successful stealthy attack should leave the system-POV rows inside that
/// band while its true trajectory scores above it.
pub fn tbd_report(
    planned: &[[f64; 2]],
    normals: &[Vec<[f64; 2]>],
    pov: &[[f64; 2]],
    attack: &[[f64; 2]],
    base_seed: u64,
) -> Result<DivergenceReport> {
    if normals.len() < 2 {
        return Err(Error::Config(
            "nominal band needs at least two normal trajectories".into(),
        ));
    }
    let mut trajs: Vec<&[[f64; 2]]> = vec![planned, pov, attack];
    trajs.extend(normals.iter().map(|n| n.as_slice()));
    let k = k_common(&trajs, DEFAULT_COMPONENTS);

    let mut rows = Vec::new();
    for j in 0..REPORT_FITS as u64 {
        let seed = base_seed.wrapping_add(j);
        let planned_fit = fit_gmm(planned, k, seed)?;
        for normal in normals {
            rows.push(TslRow {
                role: "normal".into(),
                seed,
                tsl: tsl(&fit_gmm(normal, k, seed)?, &planned_fit)?,
            });
        }
        rows.push(TslRow {
            role: "pov".into(),
            seed,
            tsl: tsl(&fit_gmm(pov, k, seed)?, &planned_fit)?,
        });
        rows.push(TslRow {
            role: "attack".into(),
            seed,
            tsl: tsl(&fit_gmm(attack, k, seed)?, &planned_fit)?,
        });
    }

    let normal_q = quartiles_for("normal", &rows);
    let pov_q = quartiles_for("pov", &rows);
    let attack_q = quartiles_for("attack", &rows);
    let nominal_band_max = normal_q.max;
    let report = DivergenceReport {
        components: k,
        nominal_band_max,
        pov_median: pov_q.median,
        attack_median: attack_q.median,
        pov_within_band: pov_q.median <= nominal_band_max,
        attack_exceeds_band: attack_q.median > nominal_band_max,
        rows,
        quartiles: vec![normal_q, pov_q, attack_q],
    };
    Ok(report)
}

/// Write boxplot rows as CSV with columns (role, seed, tsl).
pub fn write_tsl_csv<W: std::io::Write>(w: W, rows: &[TslRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn unit_gmm(center: [f64; 2]) -> GmmModel {
        GmmModel {
            weights: vec![1.0],
            means: vec![center],
            covs: vec![[[1.0, 0.0], [0.0, 1.0]]],
        }
    }

    #[test]
    fn origin_density_matches_closed_form() {
        // N(0; delta, 2I) = exp(-|delta|^2 / 4) / (4 pi).
        for delta in [[0.0, 0.0], [1.0, 0.0], [0.5, -2.0], [3.0, 4.0]] {
            let d = density_at_origin(delta, [[2.0, 0.0], [0.0, 2.0]]).unwrap();
            let expected = (-(delta[0] * delta[0] + delta[1] * delta[1]) / 4.0).exp()
                / (4.0 * std::f64::consts::PI);
            assert_relative_eq!(d, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn singular_covariance_sum_is_an_error() {
        assert!(density_at_origin([0.0, 0.0], [[0.0, 0.0], [0.0, 0.0]]).is_err());
        let degenerate = GmmModel {
            weights: vec![1.0],
            means: vec![[0.0, 0.0]],
            covs: vec![[[1.0, 1.0], [1.0, 1.0]]],
        };
        // Sum of two rank-one covariances pointing the same way stays singular.
        assert!(tsl(&degenerate, &degenerate).is_err());
    }

    #[test]
    fn pair_divergence_of_unit_mixtures_reduces_to_single_gaussian() {
        let r = unit_gmm([0.0, 0.0]);
        let q = unit_gmm([2.0, -1.0]);
        let d = pair_divergence(&r, &q).unwrap();
        let expected = (-(4.0 + 1.0) / 4.0_f64).exp() / (4.0 * std::f64::consts::PI);
        assert_relative_eq!(d, expected, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_component_counts_are_rejected() {
        let one = unit_gmm([0.0, 0.0]);
        let two = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![[0.0, 0.0], [1.0, 1.0]],
            covs: vec![[[1.0, 0.0], [0.0, 1.0]]; 2],
        };
        assert!(matches!(pair_divergence(&one, &two), Err(Error::Config(_))));
    }

    #[test]
    fn self_divergence_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<[f64; 2]> = (0..400)
            .map(|_| [n.sample(&mut rng), 5.0 + n.sample(&mut rng)])
            .collect();
        let p = fit_gmm(&pts, 3, 11).unwrap();
        let value = tsl(&p, &p).unwrap();
        assert_eq!(value, 0.0);
        assert!(value.abs() <= 1e-12);
    }

    #[test]
    fn divergence_grows_monotonically_with_translation() {
        let q = GmmModel {
            weights: vec![0.4, 0.6],
            means: vec![[0.0, 0.0], [3.0, 1.0]],
            covs: vec![[[1.0, 0.2], [0.2, 0.8]], [[0.5, 0.0], [0.0, 1.5]]],
        };
        let mut last = -f64::INFINITY;
        for offset in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let mut r = q.clone();
            for m in &mut r.means {
                m[0] += offset;
                m[1] += offset * 0.5;
            }
            let v = tsl(&r, &q).unwrap();
            assert!(
                v > last || (offset == 0.0 && v == 0.0),
                "divergence must grow with translation: offset {offset} gave {v} after {last}"
            );
            last = v;
        }
    }

    fn circle(radius: f64, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        let d = Normal::new(0.0, noise.max(1e-12)).unwrap();
        (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                [
                    radius * th.cos() + d.sample(rng),
                    radius * th.sin() + d.sample(rng),
                ]
            })
            .collect()
    }

    #[test]
    fn report_separates_drifted_trajectory_from_faithful_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let planned = circle(10.0, 400, 0.0, &mut rng);
        let normals: Vec<Vec<[f64; 2]>> =
            (0..3).map(|_| circle(10.0, 400, 0.08, &mut rng)).collect();
        // The system believes it is flying the circle...
        let pov = circle(10.0, 400, 0.08, &mut rng);
        // ...while the vehicle actually drifts steadily north.
        let attack: Vec<[f64; 2]> = circle(10.0, 400, 0.08, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, p)| [p[0] + 12.0 * i as f64 / 400.0, p[1]])
            .collect();
        let report = tbd_report(&planned, &normals, &pov, &attack, 77).unwrap();
        assert_eq!(report.components, DEFAULT_COMPONENTS);
        assert_eq!(report.rows.len(), REPORT_FITS * (3 + 2));
        assert!(
            report.pov_within_band,
            "faithful POV should stay in band: {:?}",
            report.quartiles
        );
        assert!(
            report.attack_exceeds_band,
            "drifted trajectory should leave band: {:?}",
            report.quartiles
        );
        // Report is a pure function of its inputs.
        let again = tbd_report(&planned, &normals, &pov, &attack, 77).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn report_requires_two_normals_and_csv_has_expected_shape() {
        let planned = vec![[0.0, 0.0]; 100];
        let err = tbd_report(&planned, &[planned.clone()], &planned, &planned, 0);
        assert!(matches!(err, Err(Error::Config(_))));

        let rows = vec![
            TslRow { role: "normal".into(), seed: 1, tsl: 0.25 },
            TslRow { role: "attack".into(), seed: 1, tsl: 2.5 },
        ];
        let mut buf = Vec::new();
        write_tsl_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("role,seed,tsl\n"));
        assert!(text.contains("normal,1,0.25"));
    }

    #[test]
    fn station_keeping_reports_fall_back_to_one_component() {
        // A hold mission's planned trajectory is a single repeated point.
        let planned = vec![[1.0, 1.0]; 200];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 0.05).unwrap();
        let jitter = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
            (0..200)
                .map(|_| [1.0 + n.sample(rng), 1.0 + n.sample(rng)])
                .collect()
        };
        let normals = vec![jitter(&mut rng), jitter(&mut rng)];
        let pov = jitter(&mut rng);
        let attack: Vec<[f64; 2]> = (0..200)
            .map(|i| [1.0 + 8.0 * i as f64 / 200.0, 1.0])
            .collect();
        let report = tbd_report(&planned, &normals, &pov, &attack, 9).unwrap();
        assert_eq!(report.components, 1);
        assert!(report.attack_exceeds_band);
    }
}
