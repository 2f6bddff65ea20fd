//! Fairness-aware hand-load estimation from IMU gait cycles.
//!
//! The crate covers the whole pipeline: zero-phase filtering and stride
//! segmentation ([`signal`]), a seeded synthetic gait generator
//! ([`synth`]), the debiasing variational autoencoder ([`dvae`]) built on a
//! small hand-written network library ([`nn`]), a k-NN baseline
//! ([`knn`]), group fairness metrics ([`metrics`]) and the
//! leave-one-subject-out ratio sweep ([`harness`]).

pub mod cli;
pub mod dvae;
pub mod error;
pub mod harness;
pub mod knn;
pub mod metrics;
pub mod nn;
pub mod probe;
pub mod selftest;
pub mod signal;
pub mod synth;
pub mod tensorfile;

pub use error::{Error, Result};
