//! Per-feature standardization stored alongside trained models.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose standard deviation is below this tolerance (relative to
/// their mean magnitude) are treated as constant and passed through with
/// unit scale. Dividing by a vanishing spread would blow up both training
/// inputs and gradients on any value the corpus never varied — and would
/// turn the tiny float rounding of such values into enormous z-scores the
/// moment they drift at deployment time.
pub const CONST_COLUMN_TOL: f64 = 1e-9;

/// Affine per-feature normalizer: `z = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Identity normalizer (used where no target statistics exist, e.g. the
    /// outputs of a generator network).
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fit mean and standard deviation per feature column.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::SchemaMismatch {
                expected: dim as u32,
                found: rows.iter().map(|r| r.len()).find(|&l| l != dim).unwrap() as u32,
            });
        }
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64).sqrt();
                if sd < CONST_COLUMN_TOL * (1.0 + m.abs()) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.dim());
        DVector::from_iterator(
            x.len(),
            x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s),
        )
    }

    pub fn inverse(&self, z: &DVector<f64>) -> Vec<f64> {
        assert_eq!(z.len(), self.dim());
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Chain a gradient w.r.t. the normalized vector back to raw units:
    /// `d/dx = (d/dz) / std`.
    pub fn chain_input_grad(&self, d_z: &DVector<f64>) -> Vec<f64> {
        d_z.iter().zip(&self.std).map(|(g, s)| g / s).collect()
    }

    /// Chain a gradient w.r.t. raw (denormalized) outputs to the normalized
    /// outputs the network actually produces: `d/dz = (d/dy) * std`.
    pub fn chain_output_grad(&self, d_y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(d_y.len(), d_y.iter().zip(&self.std).map(|(g, s)| g * s))
    }
}
