//! Invariant and equivariant contrastive learners on synthetic datasets with
//! controllable finite symmetries, combined into multi-symmetry ensembles.
//!
//! The crate is organized around seven parts:
//!
//! - [`groups`]: finite symmetry groups (quarter-turn rotation, half-swap,
//!   color inversion) acting exactly on images.
//! - [`dataset`]: synthetic dataset generation, stratified splitting,
//!   augmentation, and the `MSEDS1` file format.
//! - [`model`]: a small MLP encoder/projector/predictor stack with explicit
//!   reverse-mode gradients, the contrastive and transformation-prediction
//!   objectives, classifier conversion, and the `MSEMD1` checkpoint format.
//! - [`linear_theory`]: closed-form least-squares heads for invariant and
//!   equivariant linear encoders, verified against a stacked-system oracle.
//! - [`ensemble`]: a prediction registry plus random and greedy ensemble
//!   construction with mean-probability aggregation.
//! - [`metrics`]: accuracy, dominance, diversity, calibration and
//!   uncertainty-rejection metrics.
//! - [`pipeline`] and [`config`]: the reproducible experiment harness that
//!   the `multisym` binary and the examples drive.
//!
//! Every operation is a deterministic function of its inputs and seeds.

pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod groups;
pub mod image;
pub mod linear_theory;
pub mod metrics;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
