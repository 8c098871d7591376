//! The segmentation network: backbone pyramid, edge head and
//! high-resolution fusion, neighbor connection decoder, and cascaded
//! foreground-background attention.

pub mod attention;
pub mod backbone;
pub mod fba;
pub mod hrf;
pub mod ncd;
pub mod params;
mod tvnet;

pub use backbone::{check_input_size, Backbone, BackboneSpec, FeaturePyramid};
pub use fba::{decompose_regions, region_maps, Fba, FbaOutput, RegionSensitiveMaps, RegionVars};
pub use hrf::{AttentionConfig, EdgeHead, Hrf, HrfOutput};
pub use ncd::Ncd;
pub use params::{Bound, Conv, ConvSpec, Init, Param, ParamId, ParamStore};
pub use tvnet::{architecture_summary, ModelConfig, PredictionSet, PredictionVars, TvNet};
