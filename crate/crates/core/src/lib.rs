//! Flowcast: probabilistic keypoint-trajectory forecasting.
//!
//! The crate trains a GRU-conditioned normalizing flow by exact likelihood
//! and generates future trajectories two ways: plain inverse-flow sampling,
//! and refined sampling that interleaves Metropolis-Hastings steps between
//! inverse flow layers under an interpolated prior/consistency energy.
//! Evaluation compares the two modes by energy distance and by the
//! diversity-fidelity (APD-to-MAE) tradeoff.
//!
//! Module map:
//! - [`numeric`] — dense matrices, reverse-mode tape, gradient checker
//! - [`recurrent`] — GRU cell, window encoder, linear readout
//! - [`flow`] — conditional affine coupling layers with exact log-det
//! - [`model`] — the composite model: training, checkpoints, plain sampling
//! - [`sampler`] — MH-refined sampling and its diagnostics
//! - [`metrics`] — energy distance, APD/MAE, normalized ratio reports, KDE
//! - [`data`] — synthetic forked trajectories and keypoint CSV I/O

pub mod data;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod recurrent;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
