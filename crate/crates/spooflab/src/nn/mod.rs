//! A small, fully deterministic neural-network engine.
//!
//! Everything here is deliberately self-contained: dense layers with ReLU
//! hidden activations and an identity output, reverse-mode gradients that
//! extend all the way to the *input* vector (the attack optimizer
//! differentiates through frozen surrogates with respect to the measurement
//! features), Adam, and per-feature standardization folded into the saved
//! model so a serialized bundle is a single closed function.
//!
//! Determinism contract: given the same seed, initialization, shuffling and
//! training produce bit-identical parameters on every run.

pub mod mlp;
pub mod model;
pub mod norm;
pub mod optim;

pub use mlp::{ForwardCache, Layer, LayerGrad, Mlp};
pub use model::{RegressionModel, TrainConfig, MODEL_SCHEMA_VERSION};
pub use norm::Standardizer;
pub use optim::Adam;
