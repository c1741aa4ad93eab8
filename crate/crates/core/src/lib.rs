//! Multi-style stylization of 3D Gaussian splatting scenes.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`scene`]: Gaussians with per-splat semantic features and mask logits,
//!   cameras, the versioned scene file and k-nearest-neighbour queries.
//! * [`render`]: differentiable CPU splatting of color and semantic features,
//!   with reverse-mode gradients for appearance parameters.
//! * [`semantic`]: segmentation, neighbourhood smoothness, entropy and mask
//!   regularizers plus straight-through binary masking and pruning.
//! * [`style`]: feature maps, a deterministic toy extractor, local-global
//!   concatenation, nearest-neighbour feature matching, the class/style cost
//!   matrix, Hungarian assignment and the semantic multi-style loss.
//! * [`train`]: the reconstruction and stylization drivers.
//! * [`gradcheck`]: finite-difference verification of every analytic gradient.
//!
//! All arithmetic is carried out in `f64`; on-disk formats store `f32`.

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod raster;
pub mod render;
pub mod scene;
pub mod semantic;
pub mod style;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
