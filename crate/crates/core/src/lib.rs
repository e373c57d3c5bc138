//! Bias compensation and outlier rejection for UWB localization.
//!
//! The pipeline corrects each TWR or TDoA range with a learned, pose-dependent
//! bias estimate, screens it with a dynamics-feasibility gate and a chi-squared
//! innovation test, and fuses what survives in an extended Kalman filter. A
//! synthetic quadcopter world (anchors, bias field, NLOS spikes, trajectories)
//! drives training and evaluation.
//!
//! Module map:
//! - [`geometry`]: anchors, tag pose, feature vectors
//! - [`measurement`]: true ranges, bias field, noisy sampling
//! - [`nn`]: bias estimator, training, weight files
//! - [`estimator`]: EKF with the two-stage gate
//! - [`sim`]: trajectories, experiments, metrics, dataset generation
//! - [`config`]: experiment configuration documents

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod measurement;
pub mod nn;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{AnchorConstellation, FeatureVector, RangingMode, TagState};
pub use measurement::{BiasFieldParams, NoiseConfig, RangeMeasurement};
pub use nn::{MlpModel, TrainConfig, TrainingSample};
