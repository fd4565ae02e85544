//! Adam optimizer over [`Mlp`] parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mlp::{LayerGrad, Mlp};

/// Adam with bias correction; the moment buffers match the network layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_w: Vec<DMatrix<f64>>,
    v_b: Vec<DVector<f64>>,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        let m_w = mlp.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect::<Vec<_>>();
        let m_b = mlp.layers.iter().map(|l| DVector::zeros(l.b.len())).collect::<Vec<_>>();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v_w: m_w.clone(),
            v_b: m_b.clone(),
            m_w,
            m_b,
        }
    }

    /// One update step with the given (already batch-averaged) gradients.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &[LayerGrad]) {
        assert_eq!(grads.len(), mlp.layers.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            let g = &grads[i];
            self.m_w[i] = &self.m_w[i] * self.beta1 + &g.w * (1.0 - self.beta1);
            self.v_w[i] = &self.v_w[i] * self.beta2 + g.w.component_mul(&g.w) * (1.0 - self.beta2);
            self.m_b[i] = &self.m_b[i] * self.beta1 + &g.b * (1.0 - self.beta1);
            self.v_b[i] = &self.v_b[i] * self.beta2 + g.b.component_mul(&g.b) * (1.0 - self.beta2);
            for r in 0..layer.w.nrows() {
                for c in 0..layer.w.ncols() {
                    let mhat = self.m_w[i][(r, c)] / bc1;
                    let vhat = self.v_w[i][(r, c)] / bc2;
                    layer.w[(r, c)] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
                let mhat = self.m_b[i][r] / bc1;
                let vhat = self.v_b[i][r] / bc2;
                layer.b[r] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
