//! Sparse-and-invisible backdoor attack research toolkit.
//!
//! The library covers the full experimental loop for studying backdoor
//! attacks on image classifiers under joint sparsity (L0) and visibility
//! (L-infinity) constraints:
//!
//! - [`synthesis`]: trigger optimization — alternating signed gradient steps
//!   inside the L-infinity ball with periodic top-k support re-selection.
//! - [`poisoning`]: poison-set construction, label remapping rules, baseline
//!   triggers (random, sparse, patch, blended) and inference-time
//!   amplification.
//! - [`model`] / [`train`]: small CPU-friendly CNN/VGG/ResNet classifiers
//!   with a reproducible SGD training harness.
//! - [`metrics`]: benign accuracy, attack success rate, SSIM, and a
//!   pluggable perceptual-distance hook.
//! - [`defense`]: STRIP, Scale-Up, Fine-Pruning and Neural Cleanse, with
//!   shared TPR/FPR/AUROC reporting.
//! - [`pipeline`]: config-driven, resumable experiment runs, ablation grids
//!   and transfer matrices.
//!
//! Images are row-major (height, width, channel) `f32` slices in `[0, 1]`
//! throughout the public API.

pub mod defense;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod poisoning;
pub mod synthesis;
pub mod synthetic;
pub mod train;
pub mod types;

pub use error::{Result, SibaError};
