//! Seeded two-dimensional Gaussian-mixture fitting.
//!
//! Trajectory shapes are summarized as k-component mixtures over their
//! horizontal (north/east) points. Fits are deliberately seed-dependent —
//! divergence reports refit several times and look at the spread — but each
//! seed yields a bit-reproducible model: k-means++ initialization, Lloyd
//! refinement, then EM with a covariance floor.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default mixture size for trajectory summaries.
pub const DEFAULT_COMPONENTS: usize = 5;
/// Fits subsample their input evenly down to at most this many points.
pub const MAX_FIT_POINTS: usize = 2000;
/// Added to covariance diagonals every M-step; keeps degenerate clusters
/// (e.g. a station-keeping trajectory collapsed onto one point) invertible.
pub const COV_FLOOR: f64 = 1e-6;
const MAX_EM_ITERS: usize = 500;
const LOGLIK_TOL: f64 = 1e-8;
const KMEANS_ITERS: usize = 50;
const FIT_ATTEMPTS: usize = 5;

/// A fitted mixture; components are sorted by mean (north, then east) so
/// models of similar shapes pair up index-by-index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covs: Vec<[[f64; 2]; 2]>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Mean log-likelihood of `points` under the mixture.
    pub fn mean_log_likelihood(&self, points: &[[f64; 2]]) -> f64 {
        let mut total = 0.0;
        for p in points {
            let mut terms = Vec::with_capacity(self.k());
            for i in 0..self.k() {
                terms.push(self.weights[i].ln() + log_density(&self.means[i], &self.covs[i], p));
            }
            total += log_sum_exp(&terms);
        }
        total / points.len() as f64
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of the bivariate normal density at `x`.
fn log_density(mean: &[f64; 2], cov: &[[f64; 2]; 2], x: &[f64; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if det <= 0.0 || !det.is_finite() {
        return f64::NAN;
    }
    let dx = x[0] - mean[0];
    let dy = x[1] - mean[1];
    // Closed-form 2x2 inverse quadratic form.
    let q = (cov[1][1] * dx * dx - (cov[0][1] + cov[1][0]) * dx * dy + cov[0][0] * dy * dy) / det;
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
}

/// Deterministic even subsampling down to `max` points.
pub fn subsample_even(points: &[[f64; 2]], max: usize) -> Vec<[f64; 2]> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max)
        .map(|i| points[i * points.len() / max])
        .collect()
}

/// Number of distinct points (exact bit equality).
pub fn distinct_points(points: &[[f64; 2]]) -> usize {
    let mut set = std::collections::BTreeSet::new();
    for p in points {
        set.insert((p[0].to_bits(), p[1].to_bits()));
    }
    set.len()
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
}

/// k-means++ seeding followed by Lloyd iterations; returns cluster
/// assignments and centers.
fn kmeans(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<[f64; 2]>) {
    let n = points.len();
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)]);
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[idx]);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assign[i]][0] += p[0];
            sums[assign[i]][1] += p[1];
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            } else {
                // Re-seat an empty cluster on the point farthest from its
                // current center.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        sq_dist(p, &centers[assign[*i]])
                            .total_cmp(&sq_dist(q, &centers[assign[*j]]))
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[c] = points[far];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (assign, centers)
}

/// One EM fit from a k-means initialization; `None` when it degenerates.
fn em_attempt(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Option<(GmmModel, f64)> {
    let n = points.len();
    let (assign, centers) = kmeans(points, k, rng);

    let mut weights = vec![0.0; k];
    let mut means = centers;
    let mut covs = vec![[[0.0; 2]; 2]; k];
    let mut counts = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        let c = assign[i];
        counts[c] += 1;
        let dx = p[0] - means[c][0];
        let dy = p[1] - means[c][1];
        covs[c][0][0] += dx * dx;
        covs[c][0][1] += dx * dy;
        covs[c][1][0] += dy * dx;
        covs[c][1][1] += dy * dy;
    }
    for c in 0..k {
        let m = counts[c].max(1) as f64;
        weights[c] = counts[c] as f64 / n as f64;
        for r in 0..2 {
            for s in 0..2 {
                covs[c][r][s] /= m;
            }
            covs[c][r][r] += COV_FLOOR;
        }
        if weights[c] == 0.0 {
            weights[c] = 1.0 / n as f64;
        }
    }
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }

    let mut resp = vec![vec![0.0; k]; n];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = prev_ll;
    for _ in 0..MAX_EM_ITERS {
        // E-step in log space.
        let mut total_ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let terms: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + log_density(&means[c], &covs[c], p))
                .collect();
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                return None;
            }
            total_ll += lse;
            for c in 0..k {
                resp[i][c] = (terms[c] - lse).exp();
            }
        }
        ll = total_ll / n as f64;
        if (ll - prev_ll).abs() < LOGLIK_TOL {
            break;
        }
        prev_ll = ll;

        // M-step.
        for c in 0..k {
            let rsum: f64 = resp.iter().map(|r| r[c]).sum();
            if rsum <= 0.0 || !rsum.is_finite() {
                return None;
            }
            weights[c] = rsum / n as f64;
            let mut mx = 0.0;
            let mut my = 0.0;
            for (i, p) in points.iter().enumerate() {
                mx += resp[i][c] * p[0];
                my += resp[i][c] * p[1];
            }
            means[c] = [mx / rsum, my / rsum];
            let mut cov = [[0.0; 2]; 2];
            for (i, p) in points.iter().enumerate() {
                let dx = p[0] - means[c][0];
                let dy = p[1] - means[c][1];
                cov[0][0] += resp[i][c] * dx * dx;
                cov[0][1] += resp[i][c] * dx * dy;
                cov[1][1] += resp[i][c] * dy * dy;
            }
            cov[1][0] = cov[0][1];
            for r in 0..2 {
                for s in 0..2 {
                    cov[r][s] /= rsum;
                }
                cov[r][r] += COV_FLOOR;
            }
            covs[c] = cov;
        }
    }
    if !ll.is_finite() {
        return None;
    }

    // Sort components by mean so equal shapes line up index-by-index.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        means[a][0]
            .total_cmp(&means[b][0])
            .then(means[a][1].total_cmp(&means[b][1]))
    });
    let model = GmmModel {
        weights: order.iter().map(|&i| weights[i]).collect(),
        means: order.iter().map(|&i| means[i]).collect(),
        covs: order.iter().map(|&i| covs[i]).collect(),
    };
    Some((model, ll))
}

/// Fit a k-component mixture to horizontal trajectory points.
///
/// Points are evenly subsampled to at most [`MAX_FIT_POINTS`]; the fit
/// requires at least `k` distinct points. Up to five re-initializations are
/// attempted and the best final likelihood wins; the whole procedure is a
/// pure function of `(points, k, seed)`.
pub fn fit_gmm(points: &[[f64; 2]], k: usize, seed: u64) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    let pts = subsample_even(points, MAX_FIT_POINTS);
    if pts.len() < 10 * k {
        return Err(Error::DegenerateFit(format!(
            "{} points cannot support {k} components (need ten per component)",
            pts.len()
        )));
    }
    if distinct_points(&pts) < k {
        return Err(Error::DegenerateFit(format!(
            "{} distinct points cannot support {k} components",
            distinct_points(&pts)
        )));
    }
    let mut best: Option<(GmmModel, f64)> = None;
    for attempt in 0..FIT_ATTEMPTS as u64 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E3779B97F4A7C15)));
        if let Some((model, ll)) = em_attempt(&pts, k, &mut rng) {
            if best.as_ref().map_or(true, |(_, b)| ll > *b) {
                best = Some((model, ll));
            }
        }
    }
    best.map(|(m, _)| m)
        .ok_or_else(|| Error::DegenerateFit("every mixture fit attempt degenerated".into()))
}
