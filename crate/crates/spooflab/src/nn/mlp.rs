//! Dense multi-layer perceptron with reverse-mode gradients.
//!
//! Hidden activations are ReLU (subgradient 0 at exactly 0); the output
//! layer is linear. `backward` returns both the parameter gradients and the
//! gradient with respect to the network input — the latter is what lets an
//! attack generator optimize measurement perturbations through a frozen
//! surrogate of the filter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One dense layer: `z = w * a + b`, `w` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Parameter gradients for one layer (same shapes as [`Layer`]).
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &Layer) -> Self {
        LayerGrad {
            w: DMatrix::zeros(layer.w.nrows(), layer.w.ncols()),
            b: DVector::zeros(layer.b.len()),
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        self.w += &other.w;
        self.b += &other.b;
    }

    pub fn scale(&mut self, s: f64) {
        self.w *= s;
        self.b *= s;
    }
}

/// Intermediate values kept by [`Mlp::forward_cached`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[i+1]` is layer `i`'s
    /// post-activation output. The last entry is the network output.
    pub activations: Vec<DVector<f64>>,
    /// Pre-activation values of each layer.
    pub pre: Vec<DVector<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().expect("non-empty cache")
    }
}

/// Fully connected network: ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-uniform initialization: `w ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in))`,
    /// biases zero. `dims` lists layer widths input-first, e.g.
    /// `[29, 50, 50, 8]`.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let layers = dims
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..limit));
                Layer { w, b: DVector::zeros(fan_out) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty").w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.nrows()
    }

    /// Layer widths input-first (inverse of the `dims` passed to `new`).
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.layers.len();
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &a + &layer.b;
            if i + 1 < n {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Forward pass that retains every intermediate needed by `backward`.
    pub fn forward_cached(&self, x: &DVector<f64>) -> ForwardCache {
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = &layer.w * activations.last().unwrap() + &layer.b;
            pre.push(z.clone());
            let a = if i + 1 < n {
                z.map(|v| v.max(0.0))
            } else {
                z
            };
            activations.push(a);
        }
        ForwardCache { activations, pre }
    }

    /// Smallest |pre-activation| over all hidden units at input `x`.
    ///
    /// Finite-difference gradient checks are only valid when no ReLU flips
    /// inside the probe window; callers redraw probes whose margin is too
    /// small.
    pub fn kink_margin(&self, x: &DVector<f64>) -> f64 {
        let cache = self.forward_cached(x);
        let hidden = cache.pre.len().saturating_sub(1);
        cache.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, &z| m.min(z.abs()))
    }

    /// Which hidden units are active (pre-activation > 0) at input `x`.
    ///
    /// Two inputs with identical patterns lie in the same linear region, so
    /// a central difference between them carries no kink error at all.
    pub fn activation_pattern(&self, x: &DVector<f64>) -> Vec<bool> {
        let cache = self.forward_cached(x);
        let hidden = cache.pre.len().saturating_sub(1);
        cache.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Reverse-mode pass. `d_out` is the loss gradient with respect to the
    /// network output; returns per-layer parameter gradients and the loss
    /// gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, d_out: &DVector<f64>) -> (Vec<LayerGrad>, DVector<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<LayerGrad> = self.layers.iter().map(LayerGrad::zeros_like).collect();
        let mut delta = d_out.clone();
        for i in (0..n).rev() {
            grads[i].w = &delta * cache.activations[i].transpose();
            grads[i].b = delta.clone();
            let d_prev = self.layers[i].w.transpose() * &delta;
            if i > 0 {
                // ReLU subgradient: 1 for strictly positive pre-activation,
                // 0 otherwise (including exactly 0).
                delta = d_prev.zip_map(&cache.pre[i - 1], |g, z| if z > 0.0 { g } else { 0.0 });
            } else {
                return (grads, d_prev);
            }
        }
        unreachable!("loop always returns at i == 0")
    }
}
