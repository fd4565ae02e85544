//! # spooflab
//!
//! A desk-scale closed-loop laboratory for studying stealthy false-data
//! injection against an EKF-based autopilot, end to end:
//!
//! * a point-mass quadrotor plant with IMU/GPS models and wind ([`sim`]),
//! * a 10-state extended Kalman filter navigation solution ([`ekf`]),
//! * mission profiles and a cascaded P controller that flies on the
//!   *estimate* ([`missions`], [`control`]),
//! * replayable pre-update snapshots of the filter ([`snapshot`]),
//! * residual anomaly detectors the attacks must evade ([`anomaly`]),
//! * a deterministic neural-network engine ([`nn`]) used to learn
//!   surrogates of the filter update ([`surrogate`]) and to train
//!   injection generators against them ([`spoofer`]),
//! * naive spoofing baselines ([`attacks`]),
//! * closed-loop experiment orchestration ([`exp`]) and evaluation
//!   metrics, including trajectory-shape divergence ([`metrics`]).
//!
//! The crate is primarily consumed through its examples (one runnable
//! example per capability) and a thin `spooflab` binary exposing the same
//! stages as subcommands.

pub mod anomaly;
pub mod attacks;
pub mod control;
pub mod ekf;
pub mod error;
pub mod exp;
pub mod frames;
pub mod metrics;
pub mod missions;
pub mod nn;
pub mod sim;
pub mod snapshot;
pub mod spoofer;
pub mod surrogate;

pub use error::{Error, Result};
