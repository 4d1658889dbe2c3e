//! Scale-space approximation (SSA) for multi-scale segmentation networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`spectral`]: 1-D frequency-domain lab for subsampling, decimation,
//!   first-order-hold upsampling and Gaussian blurring.
//! - [`engine`]: a small tape-based reverse-mode tensor engine with the layer
//!   primitives the networks need, plus finite-difference checking.
//! - [`arch`]: declarative network graphs for every variant, behind a
//!   name-keyed builder registry.
//! - [`metrics`]: threshold sweeps producing PR/ROC curves, AUCs and Dice.
//! - [`data`]: PGM/PPM ingestion, dataset directories and a seeded synthetic
//!   vessel-image generator.
//! - [`train`]: deterministic SGD training, checkpoints, evaluation and the
//!   ablation sweep.

pub mod arch;
pub mod data;
pub mod engine;
mod error;
pub mod metrics;
pub mod rng;
pub mod spectral;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
