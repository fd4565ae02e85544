//! Surrogate extraction: learn differentiable stand-ins for the navigation
//! filter's GPS update from replayable snapshots.
//!
//! Three slices are trained, mirroring the quantities the attack optimizer
//! needs:
//!
//! * **D1** `features(29) -> 8`: the six update residuals plus the
//!   innovation variances of the two monitored axes (north velocity, north
//!   position).
//! * **D2** `[D1 output(8) | features(29)] -> 1`: the post-update north
//!   velocity estimate.
//! * **D3** `[D1 output(8) | features(29)] -> 1`: the post-update north
//!   position estimate.
//!
//! Labels never come from stored data alone: every training example is
//! labeled by *querying* the real filter update on a replayable snapshot
//! (`query`), so exploration can perturb inputs freely. Exploration draws
//! additive uniform noise on the GPS measurement features (the coordinates
//! an attacker can actually touch), with bounds of ±`margin`·range per
//! feature so explored values stay within the data envelope extended by the
//! margin. D1 is trained first and frozen; D2/D3 then consume D1's
//! *predictions* (not the true labels), matching how the cascade is wired at
//! attack time.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, RegressionModel};
use crate::snapshot::{SnapshotFull, FEATURE_DIM, FEAT_GPS_BLOCK};
use crate::ekf::{IDX_POS, IDX_VEL, RES_POS_N, RES_VEL_N};

/// D1 output layout: residual(6) then the two monitored innovation variances.
pub const D1_OUTPUT_DIM: usize = 8;
/// Index of the north-velocity residual within D1's output.
pub const D1_OUT_RES_VEL_N: usize = RES_VEL_N;
/// Index of the north-position residual within D1's output.
pub const D1_OUT_RES_POS_N: usize = RES_POS_N;
/// D2/D3 input: D1 output concatenated with the snapshot features.
pub const D23_INPUT_DIM: usize = D1_OUTPUT_DIM + FEATURE_DIM;

/// Layer widths for D1: two hidden layers of 50.
pub fn d1_dims() -> Vec<usize> {
    vec![FEATURE_DIM, 50, 50, D1_OUTPUT_DIM]
}

/// Layer widths for D2/D3: ten hidden layers of 50.
pub fn d23_dims() -> Vec<usize> {
    let mut d = vec![D23_INPUT_DIM];
    d.extend(std::iter::repeat(50).take(10));
    d.push(1);
    d
}

/// Surrogate training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateTrainConfig {
    /// Epochs per slice.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Exploration bound as a fraction of each feature's data range.
    pub explore_margin: f64,
    /// Resample exploration noise every epoch (fresh labels via query).
    pub dynamic_exploration: bool,
    /// Must match the filter configuration the snapshots came from.
    pub joseph_form: bool,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            explore_margin: 0.1,
            dynamic_exploration: true,
            joseph_form: false,
            seed: 0,
        }
    }
}

/// Query the real filter update on a replayable snapshot.
///
/// Returns the three slice targets: D1's 8-vector, the post-update north
/// velocity, and the post-update north position.
pub fn query(full: &SnapshotFull, joseph_form: bool) -> Result<(Vec<f64>, f64, f64)> {
    let out = crate::snapshot::query_target(full, &full.gps, joseph_form)?;
    let mut t1 = Vec::with_capacity(D1_OUTPUT_DIM);
    for i in 0..6 {
        t1.push(out.residual[i]);
    }
    t1.push(out.innov_cov[(RES_VEL_N, RES_VEL_N)]);
    t1.push(out.innov_cov[(RES_POS_N, RES_POS_N)]);
    Ok((t1, out.state.x[IDX_VEL], out.state.x[IDX_POS]))
}

/// Additive uniform exploration noise on a set of feature indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorationConfig {
    /// Explored feature indices.
    pub indices: Vec<usize>,
    /// Per-index additive noise bounds (lower ≤ upper).
    pub omega_lower: Vec<f64>,
    pub omega_upper: Vec<f64>,
    /// Data envelope per index, kept for the bounds property: explored
    /// values stay within `[value_min + omega_lower, value_max + omega_upper]`.
    pub value_min: Vec<f64>,
    pub value_max: Vec<f64>,
}

impl ExplorationConfig {
    /// Bounds from data: `omega ~ U(-margin*range, +margin*range)` per
    /// explored feature, where `range = max - min` over the corpus.
    pub fn from_snapshots(snaps: &[SnapshotFull], indices: &[usize], margin: f64) -> Result<Self> {
        if snaps.is_empty() {
            return Err(Error::InsufficientData("exploration bounds need at least one snapshot".into()));
        }
        if margin < 0.0 {
            return Err(Error::Config(format!("exploration margin must be >= 0, got {margin}")));
        }
        let mut value_min = vec![f64::INFINITY; indices.len()];
        let mut value_max = vec![f64::NEG_INFINITY; indices.len()];
        for s in snaps {
            let f = s.features();
            for (slot, &idx) in indices.iter().enumerate() {
                value_min[slot] = value_min[slot].min(f[idx]);
                value_max[slot] = value_max[slot].max(f[idx]);
            }
        }
        let mut omega_lower = Vec::with_capacity(indices.len());
        let mut omega_upper = Vec::with_capacity(indices.len());
        for slot in 0..indices.len() {
            let range = value_max[slot] - value_min[slot];
            omega_lower.push(-margin * range);
            omega_upper.push(margin * range);
        }
        Ok(ExplorationConfig {
            indices: indices.to_vec(),
            omega_lower,
            omega_upper,
            value_min,
            value_max,
        })
    }

    /// Default explored set: the GPS measurement block.
    pub fn gps_block(snaps: &[SnapshotFull], margin: f64) -> Result<Self> {
        let indices: Vec<usize> = FEAT_GPS_BLOCK.collect();
        Self::from_snapshots(snaps, &indices, margin)
    }

    /// Draw one additive offset for explored slot `slot`.
    pub fn draw(&self, slot: usize, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = (self.omega_lower[slot], self.omega_upper[slot]);
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    }
}

/// One-perturbation-per-(snapshot, index) expansion: emits `|I|·|S|` new
/// replayable records, each differing from its source in exactly one
/// explored feature.
pub fn explore_input(
    snaps: &[SnapshotFull],
    cfg: &ExplorationConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<SnapshotFull> {
    let mut out = Vec::with_capacity(snaps.len() * cfg.indices.len());
    for s in snaps {
        for (slot, &idx) in cfg.indices.iter().enumerate() {
            let mut copy = s.clone();
            copy.perturb(idx, cfg.draw(slot, rng));
            out.push(copy);
        }
    }
    out
}

/// The three trained slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSet {
    pub d1: RegressionModel,
    pub d2: RegressionModel,
    pub d3: RegressionModel,
}

impl SurrogateSet {
    /// Build the D2/D3 input from a D1 output and the raw features.
    pub fn cascade_input(d1_out: &[f64], features: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(D23_INPUT_DIM);
        v.extend_from_slice(d1_out);
        v.extend_from_slice(features);
        v
    }

    /// Full forward pass: `[D1(s) | D2(D1(s), s) | D3(D1(s), s)]` (10 values).
    pub fn forward(&self, features: &[f64]) -> Vec<f64> {
        let d1 = self.d1.predict(features);
        let cascade = Self::cascade_input(&d1, features);
        let d2 = self.d2.predict(&cascade);
        let d3 = self.d3.predict(&cascade);
        let mut out = d1;
        out.extend_from_slice(&d2);
        out.extend_from_slice(&d3);
        out
    }

    /// Gradient of a scalar loss w.r.t. the features, given its gradient
    /// w.r.t. the 10 concatenated outputs. D2/D3 gradients flow both
    /// directly into the features and through D1's output slot.
    pub fn input_gradient(&self, features: &[f64], d_loss_d_out: &[f64; 10]) -> Vec<f64> {
        let d1_out = self.d1.predict(features);
        let cascade = Self::cascade_input(&d1_out, features);

        // Direct D1 contribution plus whatever D2/D3 push back into D1's slot.
        let mut d_d1 = [0.0; D1_OUTPUT_DIM];
        let mut grad = vec![0.0; FEATURE_DIM];
        for (model, w) in [(&self.d2, d_loss_d_out[8]), (&self.d3, d_loss_d_out[9])] {
            if w != 0.0 {
                let (_, g) = model.input_gradient(&cascade, &[w]);
                for i in 0..D1_OUTPUT_DIM {
                    d_d1[i] += g[i];
                }
                for i in 0..FEATURE_DIM {
                    grad[i] += g[D1_OUTPUT_DIM + i];
                }
            }
        }
        for i in 0..D1_OUTPUT_DIM {
            d_d1[i] += d_loss_d_out[i];
        }
        if d_d1.iter().any(|&g| g != 0.0) {
            let (_, g1) = self.d1.input_gradient(features, &d_d1);
            for i in 0..FEATURE_DIM {
                grad[i] += g1[i];
            }
        }
        grad
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.d1.save(&dir.join("d1.json"))?;
        self.d2.save(&dir.join("d2.json"))?;
        self.d3.save(&dir.join("d3.json"))?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(SurrogateSet {
            d1: RegressionModel::load(&dir.join("d1.json"))?,
            d2: RegressionModel::load(&dir.join("d2.json"))?,
            d3: RegressionModel::load(&dir.join("d3.json"))?,
        })
    }
}

/// One point of a per-slice training curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub slice: String,
    /// 0 = before any training step of that slice.
    pub epoch: usize,
    /// Held-out raw-unit MSE.
    pub test_loss: f64,
}

/// Labeled training example in slice-ready form.
struct Labeled {
    features: Vec<f64>,
    t1: Vec<f64>,
    t2: f64,
    t3: f64,
}

fn label_all(snaps: &[SnapshotFull], joseph: bool) -> Result<Vec<Labeled>> {
    snaps
        .iter()
        .map(|s| {
            let (t1, t2, t3) = query(s, joseph)?;
            Ok(Labeled { features: s.features(), t1, t2, t3 })
        })
        .collect()
}

/// Train the full surrogate set.
///
/// Static expansion (originals plus one perturbation per snapshot and
/// explored index) is labeled once and reused; when dynamic exploration is
/// on, each epoch additionally trains on a freshly resampled expansion with
/// labels queried from the real update. Both mechanisms cover the input
/// region a spoofer will later drive the filter into.
///
/// Returns the trained set and per-epoch held-out test losses per slice
/// (epoch 0 is the pre-training loss).
pub fn train_surrogates(
    train: &[SnapshotFull],
    test: &[SnapshotFull],
    cfg: &SurrogateTrainConfig,
) -> Result<(SurrogateSet, Vec<CurvePoint>)> {
    if train.len() < 10 || test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "surrogate training needs >= 10 train and >= 1 test snapshots, got {}/{}",
            train.len(),
            test.len()
        )));
    }
    let explore = ExplorationConfig::gps_block(train, cfg.explore_margin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Static expansion, labeled once.
    let mut static_set = train.to_vec();
    static_set.extend(explore_input(train, &explore, &mut rng));
    let static_labeled = label_all(&static_set, cfg.joseph_form)?;
    let test_labeled = label_all(test, cfg.joseph_form)?;

    let mut curves = Vec::new();

    // ---- D1 --------------------------------------------------------------
    let mut d1 = RegressionModel::new(&d1_dims(), cfg.seed ^ 0xD1);
    {
        let inputs: Vec<Vec<f64>> = static_labeled.iter().map(|l| l.features.clone()).collect();
        let targets: Vec<Vec<f64>> = static_labeled.iter().map(|l| l.t1.clone()).collect();
        d1.fit_normalizers(&inputs, &targets)?;
        let mut opt = Adam::new(&d1.mlp, cfg.lr);
        let test_in: Vec<Vec<f64>> = test_labeled.iter().map(|l| l.features.clone()).collect();
        let test_t: Vec<Vec<f64>> = test_labeled.iter().map(|l| l.t1.clone()).collect();
        curves.push(CurvePoint { slice: "d1".into(), epoch: 0, test_loss: d1.dataset_mse_raw(&test_in, &test_t) });
        for epoch in 1..=cfg.epochs {
            let (mut ep_in, mut ep_t) = (inputs.clone(), targets.clone());
            if cfg.dynamic_exploration {
                let dynamic = explore_input(train, &explore, &mut rng);
                for s in &dynamic {
                    let (t1, _, _) = query(s, cfg.joseph_form)?;
                    ep_in.push(s.features());
                    ep_t.push(t1);
                }
            }
            d1.train_epoch(&ep_in, &ep_t, &mut opt, cfg.batch_size, &mut rng);
            curves.push(CurvePoint { slice: "d1".into(), epoch, test_loss: d1.dataset_mse_raw(&test_in, &test_t) });
        }
    }

    // ---- D2 / D3 ----------------------------------------------------------
    // D1 is frozen; cascade inputs use its predictions, exactly as at attack
    // time.
    let static_cascade: Vec<Vec<f64>> = static_labeled
        .iter()
        .map(|l| SurrogateSet::cascade_input(&d1.predict(&l.features), &l.features))
        .collect();
    let test_cascade: Vec<Vec<f64>> = test_labeled
        .iter()
        .map(|l| SurrogateSet::cascade_input(&d1.predict(&l.features), &l.features))
        .collect();

    let train_scalar = |name: &str,
                            seed_tag: u64,
                            target_of: &dyn Fn(&Labeled) -> f64,
                            rng: &mut ChaCha8Rng,
                            curves: &mut Vec<CurvePoint>|
     -> Result<RegressionModel> {
        let mut model = RegressionModel::new(&d23_dims(), cfg.seed ^ seed_tag);
        let targets: Vec<Vec<f64>> = static_labeled.iter().map(|l| vec![target_of(l)]).collect();
        model.fit_normalizers(&static_cascade, &targets)?;
        let mut opt = Adam::new(&model.mlp, cfg.lr);
        let test_t: Vec<Vec<f64>> = test_labeled.iter().map(|l| vec![target_of(l)]).collect();
        curves.push(CurvePoint {
            slice: name.into(),
            epoch: 0,
            test_loss: model.dataset_mse_raw(&test_cascade, &test_t),
        });
        for epoch in 1..=cfg.epochs {
            let (mut ep_in, mut ep_t) = (static_cascade.clone(), targets.clone());
            if cfg.dynamic_exploration {
                let dynamic = explore_input(train, &explore, rng);
                for s in &dynamic {
                    let (t1, t2, t3) = query(s, cfg.joseph_form)?;
                    let f = s.features();
                    ep_in.push(SurrogateSet::cascade_input(&d1.predict(&f), &f));
                    let _ = t1;
                    ep_t.push(vec![if name == "d2" { t2 } else { t3 }]);
                }
            }
            model.train_epoch(&ep_in, &ep_t, &mut opt, cfg.batch_size, rng);
            curves.push(CurvePoint {
                slice: name.into(),
                epoch,
                test_loss: model.dataset_mse_raw(&test_cascade, &test_t),
            });
        }
        Ok(model)
    };

    let d2 = train_scalar("d2", 0xD2, &|l| l.t2, &mut rng, &mut curves)?;
    let d3 = train_scalar("d3", 0xD3, &|l| l.t3, &mut rng, &mut curves)?;

    Ok((SurrogateSet { d1, d2, d3 }, curves))
}

/// Per-slice held-out raw-unit MSE of a trained set.
pub fn test_loss(set: &SurrogateSet, test: &[SnapshotFull], joseph: bool) -> Result<[f64; 3]> {
    let labeled = label_all(test, joseph)?;
    let mut sums = [0.0; 3];
    for l in &labeled {
        sums[0] += l
            .t1
            .iter()
            .zip(set.d1.predict(&l.features))
            .map(|(t, y)| (t - y) * (t - y))
            .sum::<f64>()
            / D1_OUTPUT_DIM as f64;
        let cascade = SurrogateSet::cascade_input(&set.d1.predict(&l.features), &l.features);
        let y2 = set.d2.predict(&cascade)[0];
        let y3 = set.d3.predict(&cascade)[0];
        sums[1] += (y2 - l.t2) * (y2 - l.t2);
        sums[2] += (y3 - l.t3) * (y3 - l.t3);
    }
    let n = labeled.len() as f64;
    Ok([sums[0] / n, sums[1] / n, sums[2] / n])
}

/// Fraction of held-out snapshots where D1's north-position residual has the
/// same sign as the real update's (directional fidelity; this is what the
/// attack optimizer relies on).
pub fn sign_agreement_pos_n(set: &SurrogateSet, test: &[SnapshotFull], joseph: bool) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InsufficientData("sign agreement needs a non-empty test set".into()));
    }
    let mut hits = 0usize;
    for s in test {
        let (t1, _, _) = query(s, joseph)?;
        let pred = set.d1.predict(&s.features());
        if pred[D1_OUT_RES_POS_N].signum() == t1[D1_OUT_RES_POS_N].signum() {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekf::EkfConfig;
    use crate::sim::GpsSample;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand_distr::{Distribution, Normal};

    /// Small synthetic corpus: randomized hover-like pre-update states with
    /// GPS samples scattered around them. Scatter is kept station-keeping
    /// sized so a few smoke epochs suffice to learn the residual structure.
    fn corpus(n: usize, seed: u64) -> Vec<SnapshotFull> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let cfg = EkfConfig::default();
        (0..n)
            .map(|i| {
                let pos = Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    -10.0 + rng.gen_range(-0.2..0.2),
                );
                let vel = Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.1..0.1),
                );
                let yaw = rng.gen_range(-0.3..0.3);
                let mut state = cfg.init_state(pos, vel, yaw);
                // Roughen the covariance a little so labels vary.
                for d in 0..crate::ekf::NSTATES {
                    state.p[(d, d)] *= 1.0 + 0.5 * rng.gen_range(0.0..1.0);
                }
                let gps = GpsSample {
                    pos: [
                        pos.x + noise.sample(&mut rng),
                        pos.y + noise.sample(&mut rng),
                        pos.z + noise.sample(&mut rng),
                    ],
                    vel: [
                        vel.x + noise.sample(&mut rng),
                        vel.y + noise.sample(&mut rng),
                        vel.z + noise.sample(&mut rng),
                    ],
                    h_acc: 0.55,
                    v_acc: 0.7,
                    s_acc: 0.55,
                };
                SnapshotFull::capture(&state, &gps, 0.01 * i as f64, i as f64)
            })
            .collect()
    }

    fn quick_cfg() -> SurrogateTrainConfig {
        SurrogateTrainConfig { epochs: 8, batch_size: 16, ..Default::default() }
    }

    #[test]
    fn exploration_bounds_follow_data_range() {
        let snaps = corpus(50, 1);
        let cfg = ExplorationConfig::gps_block(&snaps, 0.1).unwrap();
        assert_eq!(cfg.indices, (19..25).collect::<Vec<_>>());
        for slot in 0..cfg.indices.len() {
            let range = cfg.value_max[slot] - cfg.value_min[slot];
            assert_relative_eq!(cfg.omega_upper[slot], 0.1 * range, epsilon = 1e-12);
            assert_relative_eq!(cfg.omega_lower[slot], -0.1 * range, epsilon = 1e-12);
        }
    }

    #[test]
    fn expansion_has_expected_cardinality_and_respects_bounds() {
        let snaps = corpus(10, 2);
        let cfg = ExplorationConfig::gps_block(&snaps, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let expanded = explore_input(&snaps, &cfg, &mut rng);
        assert_eq!(expanded.len(), 10 * 6, "|I| * |S| new examples");
        for s in &expanded {
            let f = s.features();
            for (slot, &idx) in cfg.indices.iter().enumerate() {
                assert!(
                    f[idx] >= cfg.value_min[slot] + cfg.omega_lower[slot] - 1e-12
                        && f[idx] <= cfg.value_max[slot] + cfg.omega_upper[slot] + 1e-12,
                    "explored feature {idx} outside envelope"
                );
            }
        }
        // Empty index set -> empty expansion.
        let empty = ExplorationConfig::from_snapshots(&snaps, &[], 0.1).unwrap();
        assert!(explore_input(&snaps, &empty, &mut rng).is_empty());
    }

    #[test]
    fn expanded_labels_are_reproducible_by_requery() {
        let snaps = corpus(5, 4);
        let cfg = ExplorationConfig::gps_block(&snaps, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in explore_input(&snaps, &cfg, &mut rng) {
            let a = query(&s, false).unwrap();
            let b = query(&s, false).unwrap();
            assert_eq!(a, b, "query is a pure function of the record");
        }
    }

    #[test]
    fn training_reduces_test_loss_and_learns_residual_signs() {
        let train = corpus(300, 6);
        let test = corpus(60, 7);
        let (set, curves) = train_surrogates(&train, &test, &quick_cfg()).unwrap();
        for slice in ["d1", "d2", "d3"] {
            let first = curves.iter().find(|c| c.slice == slice && c.epoch == 0).unwrap();
            let last = curves.iter().filter(|c| c.slice == slice).last().unwrap();
            assert!(
                last.test_loss < first.test_loss,
                "{slice}: {} !< {}",
                last.test_loss,
                first.test_loss
            );
        }
        // A smoke corpus at a handful of epochs gets nowhere near the
        // production-scale directional fidelity, but it must be clearly
        // better than the 0.5 coin flip of an untrained model.
        let agreement = sign_agreement_pos_n(&set, &test, false).unwrap();
        assert!(agreement > 0.62, "sign agreement {agreement} too close to chance");
        let losses = test_loss(&set, &test, false).unwrap();
        assert!(losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn zero_noise_config_degenerates_to_supervised_fit() {
        let train = corpus(40, 8);
        let test = corpus(10, 9);
        let cfg = SurrogateTrainConfig {
            explore_margin: 0.0,
            dynamic_exploration: false,
            epochs: 3,
            ..quick_cfg()
        };
        // All exploration offsets are exactly 0: the expansion duplicates S.
        let explore = ExplorationConfig::gps_block(&train, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in explore_input(&train, &explore, &mut rng) {
            // Perturbed by exactly zero: features match some original.
            assert!(train.iter().any(|o| o.features() == s.features()));
        }
        let (_, curves) = train_surrogates(&train, &test, &cfg).unwrap();
        assert!(curves.iter().any(|c| c.slice == "d3"));
    }

    #[test]
    fn forward_concatenation_has_ten_outputs_and_correct_wiring() {
        let train = corpus(60, 10);
        let test = corpus(10, 11);
        let (set, _) = train_surrogates(&train, &test, &SurrogateTrainConfig { epochs: 2, ..quick_cfg() }).unwrap();
        let f = test[0].features();
        let out = set.forward(&f);
        assert_eq!(out.len(), 10);
        let d1 = set.d1.predict(&f);
        assert_eq!(&out[..8], &d1[..]);
        let cascade = SurrogateSet::cascade_input(&d1, &f);
        assert_eq!(out[8], set.d2.predict(&cascade)[0]);
        assert_eq!(out[9], set.d3.predict(&cascade)[0]);
    }

    #[test]
    fn concatenated_input_gradient_matches_finite_differences() {
        let train = corpus(60, 12);
        let test = corpus(10, 13);
        let (set, _) = train_surrogates(&train, &test, &SurrogateTrainConfig { epochs: 2, ..quick_cfg() }).unwrap();
        let f = test[3].features();
        // Scalar loss mixing all three slices: L = out[3]^2 + 2*out[8] - out[9].
        let out = set.forward(&f);
        let mut d_out = [0.0; 10];
        d_out[3] = 2.0 * out[3];
        d_out[8] = 2.0;
        d_out[9] = -1.0;
        let grad = set.input_gradient(&f, &d_out);
        let loss = |f: &[f64]| {
            let o = set.forward(f);
            o[3] * o[3] + 2.0 * o[8] - o[9]
        };
        let h = 1e-6;
        // Spot-check the attacker-relevant coordinates plus a few others.
        for idx in [4usize, 1, 19, 22, 0, 28] {
            let mut fp = f.clone();
            fp[idx] += h;
            let mut fm = f.clone();
            fm[idx] -= h;
            let fd = (loss(&fp) - loss(&fm)) / (2.0 * h);
            assert_relative_eq!(grad[idx], fd, epsilon = 1e-4, max_relative = 1e-3);
        }
    }

    #[test]
    fn save_load_round_trips_the_set() {
        let train = corpus(40, 14);
        let test = corpus(10, 15);
        let (set, _) = train_surrogates(&train, &test, &SurrogateTrainConfig { epochs: 1, ..quick_cfg() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save_dir(dir.path()).unwrap();
        let back = SurrogateSet::load_dir(dir.path()).unwrap();
        assert_eq!(set, back);
        let f = test[0].features();
        assert_eq!(set.forward(&f), back.forward(&f));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train = corpus(30, 16);
        let test = corpus(8, 17);
        let cfg = SurrogateTrainConfig { epochs: 2, ..quick_cfg() };
        let (a, _) = train_surrogates(&train, &test, &cfg).unwrap();
        let (b, _) = train_surrogates(&train, &test, &cfg).unwrap();
        assert_eq!(a, b);
        let (c, _) = train_surrogates(&train, &test, &SurrogateTrainConfig { seed: 99, ..cfg }).unwrap();
        assert_ne!(a, c);
    }
}
