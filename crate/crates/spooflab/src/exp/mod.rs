//! Experiment orchestration: configuration, the closed-loop trial runner,
//! and the pipeline stages that persist artifacts.
//!
//! The pipeline is linear and stage-addressable:
//! `collect` → `calibrate` → `train-surrogate` → `train-spoofer` → `run` →
//! `report`. Every stage is a library function (the CLI and the examples are
//! thin wrappers), takes a validated [`config::ExperimentConfig`], and emits
//! deterministic files — identical config and seeds reproduce every byte,
//! with wall-clock timestamps confined to `meta.json` sidecars.

pub mod config;
pub mod runner;
pub mod stages;
