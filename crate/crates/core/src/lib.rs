//! TVNet: edge-guided high-resolution fusion and cascaded
//! foreground-background attention for segmenting tiny objects in
//! microscopy images.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autograd`]: 64-bit NCHW tensors and a reverse-mode
//!   tape, small enough to verify against finite differences.
//! - [`model`]: the network.
//! - [`losses`]: edge BCE, pixel-weighted BCE and IoU, deep supervision.
//! - [`metrics`]: S-measure, E-measure, weighted and mean F, MAE, Dice, IoU.
//! - [`data`]: dataset layout, edge derivation, statistics, a synthetic
//!   generator, and augmentation.
//! - [`training`]: optimisation loop, checkpoints, ablation and prediction.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod map;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{ErrorKind, Result, TvnetError};
pub use map::Map;
pub use tensor::Tensor;
