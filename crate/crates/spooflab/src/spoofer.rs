//! Adversarial injection generator G, trained against the surrogate slices.
//!
//! G maps a pre-update snapshot's feature vector to an additive GPS
//! injection `(d_vel_n, d_pos_n)`. Two attack objectives:
//!
//! * **No-correction (NC)**: minimize `|L_a|^2`, where `L_a` is the pair of
//!   monitored-axis residuals D1 predicts at the spoofed input. Driving the
//!   residuals to zero nullifies the filter's north-axis corrections, so the
//!   estimate dead-reckons while the detectors see nothing.
//! * **Direction bias (DB)**: minimize `|L_a|^2 - L_b * L_d`, where
//!   `L_d = relu(x_pred_pos_n - D3(spoofed))` rewards pulling the
//!   post-update position estimate *south* of the prediction (the vehicle
//!   believes it drifted south, so closed-loop control pushes the true
//!   vehicle *north* — our documented "north bias" convention), and
//!   `L_b = relu(T - |L_a|)` gates that reward by the remaining anomaly
//!   budget: once the predicted residuals reach the budget threshold `T`,
//!   the deviation reward (and its gradient) vanishes exactly.
//!
//! Training follows a query-synthesis loop: per example, add regularization
//! noise, apply G's current injection, *fine-tune* the surrogates at that
//! spoofed input against the real filter update until they are within
//! `delta`, then backpropagate the attack objective through the frozen
//! surrogates into G. Surrogates are only ever a training device — every
//! reported attack metric comes from the real filter.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::Injection;
use crate::error::{Error, Result};
use crate::nn::{Adam, RegressionModel, Standardizer};
use crate::snapshot::{SnapshotFull, FEATURE_DIM, FEAT_GPS_POS_N, FEAT_GPS_VEL_N, FEAT_PRED_POS_N};
use crate::surrogate::{query, ExplorationConfig, SurrogateSet, D1_OUT_RES_POS_N, D1_OUT_RES_VEL_N};

/// Bumped whenever the bundle layout changes.
pub const SPOOFER_SCHEMA_VERSION: u32 = 1;

/// Safety clamp on emitted injections: ±5 m position, ±2 m/s velocity.
pub const INJECTION_CLAMP_POS_M: f64 = 5.0;
pub const INJECTION_CLAMP_VEL_MS: f64 = 2.0;

/// G output layout.
pub const G_OUT_VEL: usize = 0;
pub const G_OUT_POS: usize = 1;

/// Layer widths for G: five hidden layers of 50.
pub fn g_dims() -> Vec<usize> {
    vec![FEATURE_DIM, 50, 50, 50, 50, 50, 2]
}

/// Attack objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpooferKind {
    NoCorrection,
    DirectionBias,
}

impl std::fmt::Display for SpooferKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpooferKind::NoCorrection => "nc",
            SpooferKind::DirectionBias => "db",
        })
    }
}

impl std::str::FromStr for SpooferKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nc" | "no_correction" => Ok(SpooferKind::NoCorrection),
            "db" | "direction_bias" => Ok(SpooferKind::DirectionBias),
            other => Err(Error::Config(format!("unknown spoofer kind '{other}'"))),
        }
    }
}

/// Spoofer training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpooferConfig {
    pub kind: SpooferKind,
    /// Surrogate fine-tune tolerance (raw-unit MSE vs the real update).
    pub delta: f64,
    /// Anomaly budget threshold T on |L_a|.
    pub budget_threshold: f64,
    pub epochs: usize,
    pub g_lr: f64,
    pub finetune_lr: f64,
    /// Fine-tune iteration cap; an example still above `delta` afterwards is
    /// skipped (counted, not fatal).
    pub finetune_cap: usize,
    /// Regularization-noise bound as a fraction of feature range.
    pub explore_margin: f64,
    /// Must match the filter configuration of the snapshots.
    pub joseph_form: bool,
    pub seed: u64,
}

impl Default for SpooferConfig {
    fn default() -> Self {
        SpooferConfig {
            kind: SpooferKind::NoCorrection,
            delta: 0.025,
            budget_threshold: 0.1,
            epochs: 140,
            g_lr: 1e-3,
            finetune_lr: 1e-4,
            finetune_cap: 200,
            explore_margin: 0.1,
            joseph_form: false,
            seed: 0,
        }
    }
}

impl SpooferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("spoofer.delta must be positive".into()));
        }
        if !(self.budget_threshold > 0.0 && self.budget_threshold.is_finite()) {
            return Err(Error::Config("spoofer.budget_threshold must be positive".into()));
        }
        if self.epochs == 0 || self.finetune_cap == 0 {
            return Err(Error::Config("spoofer.epochs and finetune_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Clamp raw G outputs into an [`Injection`]; the companion mask zeroes the
/// gradient of saturated components.
fn clamp_outputs(raw: &[f64]) -> (Injection, [f64; 2]) {
    let mut mask = [1.0; 2];
    let vel = raw[G_OUT_VEL];
    let pos = raw[G_OUT_POS];
    let vel_c = vel.clamp(-INJECTION_CLAMP_VEL_MS, INJECTION_CLAMP_VEL_MS);
    let pos_c = pos.clamp(-INJECTION_CLAMP_POS_M, INJECTION_CLAMP_POS_M);
    if vel_c != vel {
        mask[G_OUT_VEL] = 0.0;
    }
    if pos_c != pos {
        mask[G_OUT_POS] = 0.0;
    }
    (Injection { d_pos_n: pos_c, d_vel_n: vel_c }, mask)
}

/// Runtime injection emission: one G forward pass, clamped.
pub fn spoof(g: &RegressionModel, features: &[f64]) -> Injection {
    let raw = g.predict(features);
    clamp_outputs(&raw).0
}

/// Apply an injection to a replayable record (same additive semantics as
/// [`crate::attacks::apply_injection`] on live GPS samples).
pub fn inject_record(full: &SnapshotFull, inj: Injection) -> SnapshotFull {
    let mut u = full.clone();
    u.perturb(FEAT_GPS_VEL_N, inj.d_vel_n);
    u.perturb(FEAT_GPS_POS_N, inj.d_pos_n);
    u
}

/// The monitored-axis residual pair predicted by D1 at raw input `f`.
pub fn anomaly_loss(d1: &RegressionModel, f: &[f64]) -> [f64; 2] {
    let out = d1.predict(f);
    [out[D1_OUT_RES_VEL_N], out[D1_OUT_RES_POS_N]]
}

/// Gradient helper: d|L_a|^2/df through D1.
fn la_sq_grad(d1: &RegressionModel, f: &[f64], la: &[f64; 2]) -> Vec<f64> {
    let mut d_out = [0.0; 8];
    d_out[D1_OUT_RES_VEL_N] = 2.0 * la[0];
    d_out[D1_OUT_RES_POS_N] = 2.0 * la[1];
    d1.input_gradient(f, &d_out).1
}

/// d|L_a|/df through D1 (unit gradient of the norm); zero at |L_a| = 0.
fn la_norm_grad(d1: &RegressionModel, f: &[f64], la: &[f64; 2]) -> Vec<f64> {
    let norm = (la[0] * la[0] + la[1] * la[1]).sqrt();
    if norm < 1e-12 {
        return vec![0.0; f.len()];
    }
    let mut d_out = [0.0; 8];
    d_out[D1_OUT_RES_VEL_N] = la[0] / norm;
    d_out[D1_OUT_RES_POS_N] = la[1] / norm;
    d1.input_gradient(f, &d_out).1
}

/// d(D3 cascade)/df: chains D3's feature-slot gradient with its D1-slot
/// gradient pushed back through D1.
fn d3_total_grad(d1: &RegressionModel, d3: &RegressionModel, f: &[f64]) -> (f64, Vec<f64>) {
    let d1_out = d1.predict(f);
    let cascade = SurrogateSet::cascade_input(&d1_out, f);
    let (y3, g_v) = d3.input_gradient(&cascade, &[1.0]);
    let (d1_slot, feat_slot) = g_v.split_at(8);
    let mut total = feat_slot.to_vec();
    if d1_slot.iter().any(|&g| g != 0.0) {
        let mut d_out = [0.0; 8];
        d_out.copy_from_slice(d1_slot);
        let (_, g1) = d1.input_gradient(f, &d_out);
        for i in 0..FEATURE_DIM {
            total[i] += g1[i];
        }
    }
    (y3[0], total)
}

/// Objective value and its gradient w.r.t. the spoofed feature vector `u`,
/// through the (frozen) surrogates.
///
/// NC: `|L_a|^2`. DB: `|L_a|^2 - L_b * L_d` with
/// `L_b = relu(T - |L_a|)`, `L_d = relu(u[pos_n_pred] - D3(u))`.
pub fn objective_and_grad(
    kind: SpooferKind,
    budget_threshold: f64,
    d1: &RegressionModel,
    d3: &RegressionModel,
    u: &[f64],
) -> (f64, Vec<f64>) {
    let la = anomaly_loss(d1, u);
    let la_sq = la[0] * la[0] + la[1] * la[1];
    let mut grad = la_sq_grad(d1, u, &la);
    let mut obj = la_sq;

    if kind == SpooferKind::DirectionBias {
        let la_norm = la_sq.sqrt();
        let l_b = (budget_threshold - la_norm).max(0.0);
        let (y3, d3_grad) = d3_total_grad(d1, d3, u);
        let diff = u[FEAT_PRED_POS_N] - y3;
        let l_d = diff.max(0.0);
        obj -= l_b * l_d;
        // d(-L_b L_d) = -(L_d dL_b + L_b dL_d); each ReLU uses subgradient 0
        // at and below the kink, so an exhausted budget contributes exactly
        // nothing.
        if l_b > 0.0 && l_d > 0.0 {
            let db_grad = la_norm_grad(d1, u, &la);
            for i in 0..FEATURE_DIM {
                grad[i] += l_d * db_grad[i];
            }
        }
        if l_b > 0.0 && l_d > 0.0 {
            for i in 0..FEATURE_DIM {
                let e_i = if i == FEAT_PRED_POS_N { 1.0 } else { 0.0 };
                grad[i] -= l_b * (e_i - d3_grad[i]);
            }
        }
    }
    (obj, grad)
}

/// Fine-tune one surrogate at a single input until its raw-unit MSE against
/// the real update is within `delta`. Returns iterations used, or `None` if
/// the cap was hit while still above `delta` (caller skips the example).
fn finetune_at(
    model: &mut RegressionModel,
    opt: &mut Adam,
    input: &[f64],
    target: &[f64],
    delta: f64,
    cap: usize,
) -> Option<usize> {
    for it in 0..=cap {
        if model.mse_raw(input, target) <= delta {
            return Some(it);
        }
        if it == cap {
            return None;
        }
        model.step_supervised(input, target, opt);
    }
    unreachable!()
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpooferCurvePoint {
    /// 0 = evaluation of the untrained generator.
    pub epoch: usize,
    /// Mean attack objective over the evaluation subset (surrogate view).
    pub mean_objective: f64,
    /// Mean |L_a| measured against the REAL update (transfer check).
    pub mean_true_anomaly: f64,
    /// Examples skipped because fine-tuning hit the iteration cap.
    pub skipped: usize,
}

/// Mean monitored-axis residual norm of G's injections measured on the real
/// filter update (never the surrogate).
pub fn mean_true_anomaly(g: &RegressionModel, snaps: &[SnapshotFull], joseph: bool) -> Result<f64> {
    let mut total = 0.0;
    for s in snaps {
        let inj = spoof(g, &s.features());
        let (t1, _, _) = query(&inject_record(s, inj), joseph)?;
        total += (t1[D1_OUT_RES_VEL_N].powi(2) + t1[D1_OUT_RES_POS_N].powi(2)).sqrt();
    }
    Ok(total / snaps.len() as f64)
}

fn eval_curve_point(
    epoch: usize,
    g: &RegressionModel,
    d1: &RegressionModel,
    d3: &RegressionModel,
    cfg: &SpooferConfig,
    eval_set: &[SnapshotFull],
    skipped: usize,
) -> Result<SpooferCurvePoint> {
    let mut mean_obj = 0.0;
    for s in eval_set {
        let f = s.features();
        let raw = g.predict(&f);
        let (inj, _) = clamp_outputs(&raw);
        let u = inject_record(s, inj);
        let (obj, _) = objective_and_grad(cfg.kind, cfg.budget_threshold, d1, d3, &u.features());
        mean_obj += obj;
    }
    Ok(SpooferCurvePoint {
        epoch,
        mean_objective: mean_obj / eval_set.len() as f64,
        mean_true_anomaly: mean_true_anomaly(g, eval_set, cfg.joseph_form)?,
        skipped,
    })
}

/// Train the generator against (a working copy of) the surrogate set.
///
/// The surrogates are fine-tuned along G's own trajectory of spoofed inputs,
/// so the returned curve's `mean_true_anomaly` — measured on the real filter
/// — is the number that matters for transfer.
pub fn train_spoofer(
    train: &[SnapshotFull],
    surrogates: &SurrogateSet,
    cfg: &SpooferConfig,
) -> Result<(RegressionModel, Vec<SpooferCurvePoint>)> {
    cfg.validate()?;
    if train.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "spoofer training needs >= 10 snapshots, got {}",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let explore = ExplorationConfig::gps_block(train, cfg.explore_margin)?;

    // Working surrogate copies (mutated by fine-tuning).
    let mut d1 = surrogates.d1.clone();
    let mut d3 = surrogates.d3.clone();
    let mut ft1 = Adam::new(&d1.mlp, cfg.finetune_lr);
    let mut ft3 = Adam::new(&d3.mlp, cfg.finetune_lr);

    // Generator: feature normalization from the corpus, identity outputs.
    let mut g = RegressionModel::new(&g_dims(), cfg.seed ^ 0x6);
    let feature_rows: Vec<Vec<f64>> = train.iter().map(|s| s.features()).collect();
    g.in_norm = Standardizer::fit(&feature_rows)?;
    g.out_norm = Standardizer::identity(2);
    let mut g_opt = Adam::new(&g.mlp, cfg.g_lr);

    let eval_n = train.len().min(256);
    let eval_set: Vec<SnapshotFull> = train[..eval_n].to_vec();
    let mut curves = vec![eval_curve_point(0, &g, &d1, &d3, cfg, &eval_set, 0)?];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut skipped = 0usize;
        for &idx in &order {
            // Regularization noise keeps G from overfitting the corpus points.
            let mut noisy = train[idx].clone();
            for (slot, &fi) in explore.indices.iter().enumerate() {
                noisy.perturb(fi, explore.draw(slot, &mut rng));
            }
            let features = noisy.features();

            let raw = g.predict(&features);
            let (inj, clamp_mask) = clamp_outputs(&raw);
            let u_rec = inject_record(&noisy, inj);
            let u = u_rec.features();

            // Ground truth at the spoofed input, via the real update.
            let (t1, _, t3) = query(&u_rec, cfg.joseph_form)?;

            // Keep the surrogates honest where G currently operates.
            if finetune_at(&mut d1, &mut ft1, &u, &t1, cfg.delta, cfg.finetune_cap).is_none() {
                skipped += 1;
                continue;
            }
            if cfg.kind == SpooferKind::DirectionBias {
                let cascade = SurrogateSet::cascade_input(&d1.predict(&u), &u);
                if finetune_at(&mut d3, &mut ft3, &cascade, &[t3], cfg.delta, cfg.finetune_cap).is_none() {
                    skipped += 1;
                    continue;
                }
            }

            // Attack objective through the frozen surrogates; only the
            // injection coordinates of the input gradient reach G.
            let (_, d_obj_d_u) = objective_and_grad(cfg.kind, cfg.budget_threshold, &d1, &d3, &u);
            let d_obj_d_g = [
                d_obj_d_u[FEAT_GPS_VEL_N] * clamp_mask[G_OUT_VEL],
                d_obj_d_u[FEAT_GPS_POS_N] * clamp_mask[G_OUT_POS],
            ];
            let grads = g.param_grads(&features, &d_obj_d_g);
            g_opt.step(&mut g.mlp, &grads);
        }
        curves.push(eval_curve_point(epoch, &g, &d1, &d3, cfg, &eval_set, skipped)?);
    }
    Ok((g, curves))
}

/// Persisted spoofer artifact: the generator plus everything needed to check
/// it is being deployed against the configuration it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpooferBundle {
    pub schema_version: u32,
    pub kind: SpooferKind,
    pub delta: f64,
    pub budget_threshold: f64,
    pub epochs: usize,
    /// Hash of the (plant, filter) configuration used in training.
    pub config_hash: String,
    pub g: RegressionModel,
}

impl SpooferBundle {
    pub fn new(g: RegressionModel, cfg: &SpooferConfig, config_hash: String) -> Self {
        SpooferBundle {
            schema_version: SPOOFER_SCHEMA_VERSION,
            kind: cfg.kind,
            delta: cfg.delta,
            budget_threshold: cfg.budget_threshold,
            epochs: cfg.epochs,
            config_hash,
            g,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let b: SpooferBundle = serde_json::from_reader(BufReader::new(file))?;
        if b.schema_version != SPOOFER_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                expected: SPOOFER_SCHEMA_VERSION,
                found: b.schema_version,
            });
        }
        Ok(b)
    }

    /// Refuse deployment against a different plant/filter configuration
    /// unless forced.
    pub fn check_config(&self, current_hash: &str, force: bool) -> Result<()> {
        if self.config_hash != current_hash && !force {
            return Err(Error::ConfigHashMismatch {
                artifact: self.config_hash.clone(),
                current: current_hash.to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{train_surrogates, SurrogateTrainConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn corpus(n: usize, seed: u64) -> Vec<SnapshotFull> {
        // Hover-like scatter, same shape as the surrogate test corpus.
        use crate::ekf::EkfConfig;
        use crate::sim::GpsSample;
        use nalgebra::Vector3;
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let cfg = EkfConfig::default();
        (0..n)
            .map(|i| {
                let pos = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), -10.0);
                let vel = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.0);
                let yaw = rng.gen_range(-0.3..0.3);
                let state = cfg.init_state(pos, vel, yaw);
                let gps = GpsSample {
                    pos: [pos.x + noise.sample(&mut rng), pos.y + noise.sample(&mut rng), pos.z],
                    vel: [vel.x + noise.sample(&mut rng), vel.y + noise.sample(&mut rng), 0.0],
                    h_acc: 0.55,
                    v_acc: 0.7,
                    s_acc: 0.55,
                };
                SnapshotFull::capture(&state, &gps, 0.0, i as f64)
            })
            .collect()
    }

    fn quick_surrogates(train: &[SnapshotFull], test: &[SnapshotFull]) -> SurrogateSet {
        let cfg = SurrogateTrainConfig { epochs: 6, batch_size: 16, ..Default::default() };
        train_surrogates(train, test, &cfg).unwrap().0
    }

    #[test]
    fn zero_weight_generator_emits_zero_injection() {
        let mut g = RegressionModel::new(&g_dims(), 0);
        for l in &mut g.mlp.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let f = corpus(1, 1)[0].features();
        assert_eq!(spoof(&g, &f), Injection::ZERO);
    }

    #[test]
    fn spoof_clamps_to_safety_rails() {
        let mut g = RegressionModel::new(&g_dims(), 0);
        // Saturate the output biases far past the rails.
        let last = g.mlp.layers.len() - 1;
        g.mlp.layers[last].b[G_OUT_VEL] = 100.0;
        g.mlp.layers[last].b[G_OUT_POS] = -100.0;
        for l in &mut g.mlp.layers[..last] {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let inj = spoof(&g, &corpus(1, 2)[0].features());
        assert_eq!(inj.d_vel_n, INJECTION_CLAMP_VEL_MS);
        assert_eq!(inj.d_pos_n, -INJECTION_CLAMP_POS_M);
    }

    #[test]
    fn perfect_cancellation_injection_zeroes_true_residuals() {
        // Closed-form oracle: setting the reported north fields equal to the
        // predicted ones makes the monitored residuals exactly zero.
        for s in corpus(10, 3) {
            let f = s.features();
            let inj = Injection {
                d_pos_n: f[crate::snapshot::FEAT_PRED_POS_N] - f[FEAT_GPS_POS_N],
                d_vel_n: f[crate::snapshot::FEAT_PRED_VEL_N] - f[FEAT_GPS_VEL_N],
            };
            let (t1, _, _) = query(&inject_record(&s, inj), false).unwrap();
            assert_relative_eq!(t1[D1_OUT_RES_VEL_N], 0.0, epsilon = 1e-12);
            assert_relative_eq!(t1[D1_OUT_RES_POS_N], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn anomaly_loss_gradient_wrt_injection_matches_finite_differences() {
        let train = corpus(60, 4);
        let test = corpus(12, 5);
        let set = quick_surrogates(&train, &test);
        let s = &test[0];
        let base = Injection { d_pos_n: 0.3, d_vel_n: -0.2 };

        let la_sq = |inj: Injection| {
            let u = inject_record(s, inj).features();
            let la = anomaly_loss(&set.d1, &u);
            la[0] * la[0] + la[1] * la[1]
        };
        let u = inject_record(s, base).features();
        let la = anomaly_loss(&set.d1, &u);
        let grad = la_sq_grad(&set.d1, &u, &la);
        let h = 1e-6;
        let fd_pos = (la_sq(Injection { d_pos_n: base.d_pos_n + h, ..base })
            - la_sq(Injection { d_pos_n: base.d_pos_n - h, ..base }))
            / (2.0 * h);
        let fd_vel = (la_sq(Injection { d_vel_n: base.d_vel_n + h, ..base })
            - la_sq(Injection { d_vel_n: base.d_vel_n - h, ..base }))
            / (2.0 * h);
        assert_relative_eq!(grad[FEAT_GPS_POS_N], fd_pos, epsilon = 1e-5, max_relative = 1e-4);
        assert_relative_eq!(grad[FEAT_GPS_VEL_N], fd_vel, epsilon = 1e-5, max_relative = 1e-4);
    }

    #[test]
    fn db_objective_gradient_matches_finite_differences() {
        let train = corpus(60, 6);
        let test = corpus(12, 7);
        let set = quick_surrogates(&train, &test);
        // Large budget so L_b > 0.
        let t_budget = 10.0;
        let h = 1e-6;
        // Networks evaluated at a probe: (D1 pattern at u, D3 pattern at the
        // cascade input).
        let patterns = |s: &SnapshotFull, inj: Injection| {
            let u = inject_record(s, inj).features();
            let p1 = set.d1.activation_pattern(&u);
            let cascade = SurrogateSet::cascade_input(&set.d1.predict(&u), &u);
            (p1, set.d3.activation_pattern(&cascade))
        };
        // Central differences through ReLU networks are only exact when the
        // whole probe window stays in one linear region: scan for a probe
        // whose activation patterns do not change across any of the four FD
        // evaluation points. Southward (negative) injections pull the
        // posterior south of the prediction, which activates the deviation
        // reward.
        let mut probe = None;
        'scan: for s in &test {
            for scale in [-1.0, -0.6, -1.5, -0.3, 1.0, 0.6] {
                let base = Injection { d_pos_n: 0.1 * scale, d_vel_n: 0.05 * scale };
                let u = inject_record(s, base).features();
                let la = anomaly_loss(&set.d1, &u);
                let la_norm = (la[0] * la[0] + la[1] * la[1]).sqrt();
                let (y3, _) = d3_total_grad(&set.d1, &set.d3, &u);
                let diff = u[FEAT_PRED_POS_N] - y3;
                let window = [
                    Injection { d_pos_n: base.d_pos_n + h, ..base },
                    Injection { d_pos_n: base.d_pos_n - h, ..base },
                    Injection { d_vel_n: base.d_vel_n + h, ..base },
                    Injection { d_vel_n: base.d_vel_n - h, ..base },
                ];
                let base_pat = patterns(s, base);
                if la_norm > 1e-3
                    && diff > 1e-3
                    && window.iter().all(|&p| patterns(s, p) == base_pat)
                {
                    probe = Some((s.clone(), base));
                    break 'scan;
                }
            }
        }
        let (s, base) = probe.expect("no kink-free probe found in the corpus");
        let u = inject_record(&s, base).features();
        let (_, grad) = objective_and_grad(SpooferKind::DirectionBias, t_budget, &set.d1, &set.d3, &u);
        let f_obj = |inj: Injection| {
            let uu = inject_record(&s, inj).features();
            objective_and_grad(SpooferKind::DirectionBias, t_budget, &set.d1, &set.d3, &uu).0
        };
        let fd_pos = (f_obj(Injection { d_pos_n: base.d_pos_n + h, ..base })
            - f_obj(Injection { d_pos_n: base.d_pos_n - h, ..base }))
            / (2.0 * h);
        let fd_vel = (f_obj(Injection { d_vel_n: base.d_vel_n + h, ..base })
            - f_obj(Injection { d_vel_n: base.d_vel_n - h, ..base }))
            / (2.0 * h);
        assert_relative_eq!(grad[FEAT_GPS_POS_N], fd_pos, epsilon = 1e-6, max_relative = 1e-5);
        assert_relative_eq!(grad[FEAT_GPS_VEL_N], fd_vel, epsilon = 1e-6, max_relative = 1e-5);
    }

    #[test]
    fn exhausted_budget_reduces_db_to_pure_anomaly_objective() {
        let train = corpus(40, 8);
        let test = corpus(8, 9);
        let set = quick_surrogates(&train, &test);
        let s = &test[0];
        let u = inject_record(s, Injection { d_pos_n: 4.0, d_vel_n: 1.5 }).features();
        let la = anomaly_loss(&set.d1, &u);
        let la_norm = (la[0] * la[0] + la[1] * la[1]).sqrt();
        assert!(la_norm > 0.0, "setup: need a nonzero predicted anomaly");
        // Pick the budget below the predicted anomaly, so it is exhausted by
        // construction.
        let t_budget = 0.5 * la_norm;
        let (obj_db, grad_db) = objective_and_grad(SpooferKind::DirectionBias, t_budget, &set.d1, &set.d3, &u);
        let (obj_nc, grad_nc) = objective_and_grad(SpooferKind::NoCorrection, t_budget, &set.d1, &set.d3, &u);
        assert_eq!(obj_db, obj_nc, "L_b = 0 must remove the deviation reward exactly");
        assert_eq!(grad_db, grad_nc, "and its gradient contribution");
    }

    #[test]
    fn nc_training_reduces_true_anomaly() {
        let train = corpus(80, 10);
        let test = corpus(16, 11);
        let set = quick_surrogates(&train, &test);
        let cfg = SpooferConfig { epochs: 6, seed: 5, ..Default::default() };
        let (g, curves) = train_spoofer(&train, &set, &cfg).unwrap();
        let pre = curves[0].mean_true_anomaly;
        let post = curves.last().unwrap().mean_true_anomaly;
        assert!(
            post < 0.5 * pre,
            "true-EKF anomaly should at least halve: pre {pre}, post {post}"
        );
        // The trained generator should approach the cancellation oracle.
        let held = &test[0];
        let inj = spoof(&g, &held.features());
        let (t1, _, _) = query(&inject_record(held, inj), false).unwrap();
        let la = (t1[D1_OUT_RES_VEL_N].powi(2) + t1[D1_OUT_RES_POS_N].powi(2)).sqrt();
        assert!(la < pre, "held-out anomaly {la} not below untrained level {pre}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train = corpus(30, 12);
        let test = corpus(8, 13);
        let set = quick_surrogates(&train, &test);
        let cfg = SpooferConfig { epochs: 2, seed: 3, ..Default::default() };
        let (a, _) = train_spoofer(&train, &set, &cfg).unwrap();
        let (b, _) = train_spoofer(&train, &set, &cfg).unwrap();
        assert_eq!(a, b);
        let (c, _) = train_spoofer(&train, &set, &SpooferConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bundle_round_trips_and_guards_config_hash() {
        let g = RegressionModel::new(&g_dims(), 1);
        let cfg = SpooferConfig::default();
        let bundle = SpooferBundle::new(g, &cfg, "abc123".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spoofer.json");
        bundle.save(&path).unwrap();
        let back = SpooferBundle::load(&path).unwrap();
        assert_eq!(bundle, back);
        assert!(back.check_config("abc123", false).is_ok());
        assert!(matches!(
            back.check_config("different", false),
            Err(Error::ConfigHashMismatch { .. })
        ));
        assert!(back.check_config("different", true).is_ok(), "--force overrides");
    }
}
