//! Trainable regression model: MLP plus frozen input/output normalization,
//! serialized together as one versioned artifact.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{LayerGrad, Mlp};
use super::norm::Standardizer;
use super::optim::Adam;
use crate::error::{Error, Result};

/// Bumped whenever the serialized model layout changes.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Supervised-training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

/// MLP regressor with standardization on both ends.
///
/// The network always operates in normalized space; `predict`,
/// `input_gradient` and `mse_raw` speak raw feature/target units, chaining
/// through the affine normalizers in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub schema_version: u32,
    pub mlp: Mlp,
    pub in_norm: Standardizer,
    pub out_norm: Standardizer,
}

impl RegressionModel {
    /// Fresh model with identity normalizers (fit them before training on
    /// raw data).
    pub fn new(dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(dims, &mut rng);
        RegressionModel {
            schema_version: MODEL_SCHEMA_VERSION,
            in_norm: Standardizer::identity(dims[0]),
            out_norm: Standardizer::identity(*dims.last().unwrap()),
            mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Fit input normalization from `inputs` and output normalization from
    /// `targets`. Call once, before training; the statistics then travel
    /// with the model.
    pub fn fit_normalizers(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
        self.in_norm = Standardizer::fit(inputs)?;
        self.out_norm = Standardizer::fit(targets)?;
        Ok(())
    }

    /// Raw-unit prediction.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.in_norm.transform(x);
        let y = self.mlp.forward(&z);
        self.out_norm.inverse(&y)
    }

    /// Gradient of a scalar loss w.r.t. the *raw* input, given the loss
    /// gradient w.r.t. the *raw* output. Returns `(y_raw, d_loss/d_x_raw)`.
    pub fn input_gradient(&self, x: &[f64], d_loss_d_y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = self.in_norm.transform(x);
        let cache = self.mlp.forward_cached(&z);
        let y = self.out_norm.inverse(cache.output());
        let d_out = self.out_norm.chain_output_grad(d_loss_d_y);
        let (_, d_z) = self.mlp.backward(&cache, &d_out);
        (y, self.in_norm.chain_input_grad(&d_z))
    }

    /// Smallest |pre-activation| over hidden units at raw input `x`; see
    /// [`Mlp::kink_margin`].
    pub fn kink_margin(&self, x: &[f64]) -> f64 {
        self.mlp.kink_margin(&self.in_norm.transform(x))
    }

    /// Hidden-unit activity pattern at raw input `x`; see
    /// [`Mlp::activation_pattern`].
    pub fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        self.mlp.activation_pattern(&self.in_norm.transform(x))
    }

    /// Parameter gradients for a scalar loss, given its gradient w.r.t. the
    /// raw output at raw input `x` (used when the loss is defined by a
    /// downstream computation rather than a fixed target).
    pub fn param_grads(&self, x: &[f64], d_loss_d_y: &[f64]) -> Vec<LayerGrad> {
        let z = self.in_norm.transform(x);
        let cache = self.mlp.forward_cached(&z);
        let d_out = self.out_norm.chain_output_grad(d_loss_d_y);
        let (grads, _) = self.mlp.backward(&cache, &d_out);
        grads
    }

    /// Mean squared error in raw target units (mean over output dims).
    pub fn mse_raw(&self, x: &[f64], target: &[f64]) -> f64 {
        let y = self.predict(x);
        y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
    }

    /// Single-example supervised Adam step (normalized-space MSE); returns
    /// the example's normalized loss before the step.
    pub fn step_supervised(&mut self, x: &[f64], target: &[f64], opt: &mut Adam) -> f64 {
        let z = self.in_norm.transform(x);
        let t = self.out_norm.transform(target);
        let cache = self.mlp.forward_cached(&z);
        let err = cache.output() - &t;
        let dim = err.len() as f64;
        let loss = err.dot(&err) / dim;
        let d_out = err * (2.0 / dim);
        let (grads, _) = self.mlp.backward(&cache, &d_out);
        opt.step(&mut self.mlp, &grads);
        loss
    }

    /// One shuffled pass over the dataset with mini-batch Adam updates.
    /// Loss is normalized-space MSE, averaged over output dims and batch;
    /// returns the epoch mean over examples.
    pub fn train_epoch(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        opt: &mut Adam,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        assert_eq!(inputs.len(), targets.len());
        assert!(!inputs.is_empty() && batch_size > 0);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let mut grads: Vec<LayerGrad> =
                self.mlp.layers.iter().map(LayerGrad::zeros_like).collect();
            for &idx in chunk {
                let z = self.in_norm.transform(&inputs[idx]);
                let t = self.out_norm.transform(&targets[idx]);
                let cache = self.mlp.forward_cached(&z);
                let err = cache.output() - &t;
                let dim = err.len() as f64;
                total += err.dot(&err) / dim;
                let d_out = err * (2.0 / dim);
                let (g, _) = self.mlp.backward(&cache, &d_out);
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                g.scale(scale);
            }
            opt.step(&mut self.mlp, &grads);
        }
        total / inputs.len() as f64
    }

    /// Full supervised fit: normalizers from the data, then `cfg.epochs`
    /// shuffled passes. Returns per-epoch mean losses (normalized space).
    pub fn train_supervised(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::InsufficientData(format!(
                "supervised training needs matching non-empty inputs/targets, got {}/{}",
                inputs.len(),
                targets.len()
            )));
        }
        self.fit_normalizers(inputs, targets)?;
        let mut opt = Adam::new(&self.mlp, cfg.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            losses.push(self.train_epoch(inputs, targets, &mut opt, cfg.batch_size, &mut rng));
        }
        Ok(losses)
    }

    /// Mean raw-unit MSE over a dataset.
    pub fn dataset_mse_raw(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        assert_eq!(inputs.len(), targets.len());
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| self.mse_raw(x, t))
            .sum::<f64>()
            / inputs.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let model: RegressionModel = serde_json::from_reader(BufReader::new(file))?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                expected: MODEL_SCHEMA_VERSION,
                found: model.schema_version,
            });
        }
        if model.in_norm.dim() != model.mlp.input_dim() || model.out_norm.dim() != model.mlp.output_dim() {
            return Err(Error::MalformedArtifact(format!(
                "normalizer dims {}/{} do not match network dims {}/{}",
                model.in_norm.dim(),
                model.out_norm.dim(),
                model.mlp.input_dim(),
                model.mlp.output_dim()
            )));
        }
        Ok(model)
    }
}

/// A vector helper for callers working with slices.
pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn toy_dataset(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        // y0 = 2 x0 + 1 - x1; y1 = x0 * 0.5 (linear, easily learnable).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x0 = rng.gen_range(-2.0..2.0);
            let x1 = rng.gen_range(-2.0..2.0);
            xs.push(vec![x0, x1]);
            ys.push(vec![2.0 * x0 + 1.0 - x1, 0.5 * x0]);
        }
        (xs, ys)
    }

    #[test]
    fn learns_a_linear_map() {
        let (xs, ys) = toy_dataset(512, 1);
        let mut model = RegressionModel::new(&[2, 16, 2], 9);
        let losses = model
            .train_supervised(&xs, &ys, &TrainConfig { epochs: 60, batch_size: 32, lr: 1e-2, seed: 3 })
            .unwrap();
        assert!(losses[losses.len() - 1] < 1e-3, "final loss {}", losses[losses.len() - 1]);
        let y = model.predict(&[1.0, -1.0]);
        assert_relative_eq!(y[0], 4.0, epsilon = 0.1);
        assert_relative_eq!(y[1], 0.5, epsilon = 0.1);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (xs, ys) = toy_dataset(64, 2);
        let cfg = TrainConfig { epochs: 5, batch_size: 16, lr: 1e-3, seed: 11 };
        let mut a = RegressionModel::new(&[2, 8, 2], 4);
        let mut b = RegressionModel::new(&[2, 8, 2], 4);
        a.train_supervised(&xs, &ys, &cfg).unwrap();
        b.train_supervised(&xs, &ys, &cfg).unwrap();
        assert_eq!(a, b);
        let mut c = RegressionModel::new(&[2, 8, 2], 4);
        c.train_supervised(&xs, &ys, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let (xs, ys) = toy_dataset(64, 3);
        let mut model = RegressionModel::new(&[2, 8, 2], 5);
        model
            .train_supervised(&xs, &ys, &TrainConfig { epochs: 3, batch_size: 8, lr: 1e-3, seed: 1 })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = RegressionModel::load(&path).unwrap();
        assert_eq!(model, back);
        let x = [0.37, -1.21];
        assert_eq!(model.predict(&x), back.predict(&x), "predictions must be bit-identical");
    }

    #[test]
    fn load_rejects_schema_and_shape_mismatches() {
        let model = RegressionModel::new(&[2, 4, 1], 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");

        let mut wrong = serde_json::to_value(&model).unwrap();
        wrong["schema_version"] = serde_json::json!(999);
        std::fs::write(&path, serde_json::to_string(&wrong).unwrap()).unwrap();
        assert!(matches!(RegressionModel::load(&path), Err(Error::SchemaMismatch { .. })));

        let mut bad = model.clone();
        bad.in_norm = Standardizer::identity(7);
        bad.save(&path).unwrap();
        assert!(matches!(RegressionModel::load(&path), Err(Error::MalformedArtifact(_))));
    }

    #[test]
    fn input_gradient_in_raw_units_matches_finite_differences() {
        let (xs, ys) = toy_dataset(128, 6);
        let mut model = RegressionModel::new(&[2, 12, 2], 2);
        model
            .train_supervised(&xs, &ys, &TrainConfig { epochs: 10, batch_size: 16, lr: 1e-2, seed: 8 })
            .unwrap();
        // Loss = y0^2 + 3 y1: d/dy = [2 y0, 3].
        let x = [0.8, -0.4];
        let y = model.predict(&x);
        let (y2, g) = model.input_gradient(&x, &[2.0 * y[0], 3.0]);
        assert_eq!(y, y2);
        let f = |x: &[f64]| {
            let y = model.predict(x);
            y[0] * y[0] + 3.0 * y[1]
        };
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-4, max_relative = 1e-4);
        }
    }

    #[test]
    fn param_grads_match_finite_differences_through_normalizers() {
        let (xs, ys) = toy_dataset(64, 7);
        let mut model = RegressionModel::new(&[2, 5, 2], 3);
        model.fit_normalizers(&xs, &ys).unwrap();
        // Loss = sum(y_raw): d/dy = 1.
        let x = [0.3, 0.9];
        let grads = model.param_grads(&x, &[1.0, 1.0]);
        let h = 1e-6;
        let loss = |m: &RegressionModel| m.predict(&x).iter().sum::<f64>();
        for li in 0..model.mlp.layers.len() {
            let mut plus = model.clone();
            plus.mlp.layers[li].w[(0, 0)] += h;
            let mut minus = model.clone();
            minus.mlp.layers[li].w[(0, 0)] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert_relative_eq!(grads[li].w[(0, 0)], fd, epsilon = 1e-4, max_relative = 1e-4);
        }
    }

    #[test]
    fn raw_mse_is_computed_in_target_units() {
        let mut model = RegressionModel::new(&[1, 4, 1], 1);
        // Force an exactly known output: zero all weights, bias in normalized
        // space maps to out mean.
        for l in &mut model.mlp.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        model.out_norm = Standardizer { mean: vec![5.0], std: vec![2.0] };
        // Network output 0 (normalized) -> raw 5.0; target 1.0 -> mse 16.
        assert_relative_eq!(model.mse_raw(&[0.0], &[1.0]), 16.0, epsilon = 1e-12);
    }

    #[test]
    fn step_supervised_reduces_single_example_error() {
        let mut model = RegressionModel::new(&[2, 8, 1], 10);
        let mut opt = Adam::new(&model.mlp, 1e-2);
        let x = [0.5, -0.25];
        let t = [2.0];
        let before = model.mse_raw(&x, &t);
        for _ in 0..200 {
            model.step_supervised(&x, &t, &mut opt);
        }
        let after = model.mse_raw(&x, &t);
        assert!(after < before * 1e-3, "before {before}, after {after}");
    }
}
