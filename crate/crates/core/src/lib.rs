//! Differentiable multi-spectral Gaussian splatting.
//!
//! Scenes are sets of anisotropic 3D Gaussians carrying per-band BRDF
//! parameters and identity encodings, lit by per-band environment maps. The
//! crate renders them with a tile-parallel CPU rasterizer, computes exact
//! gradients of the training losses, and supports grouping and editing.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod color;
pub mod config;
pub mod dataset;
pub mod edit;
pub mod error;
pub mod image;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod shading;

pub use error::{Error, Result};
