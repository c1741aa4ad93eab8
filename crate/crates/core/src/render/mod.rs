//! Differentiable splatting of color and semantic features.
//!
//! Splats are composited front to back in a single global depth order
//! (camera-space `z` of the mean, ties by Gaussian index). Each splat covers
//! the pixels whose centers fall inside a `support_sigmas` bounding box of its
//! dilated screen-space covariance.

mod backward;
mod forward;
mod project;

pub use backward::{render_backward, AppearanceGrads, Upstream};
pub use forward::{render, render_class_subset, render_filtered, render_label_map};
pub use project::{project_gaussian, Splat2D};

use crate::raster::Image;
use crate::semantic::MaskThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Color,
    Feature,
    Both,
}

impl Channels {
    pub fn color(self) -> bool {
        matches!(self, Channels::Color | Channels::Both)
    }

    pub fn feature(self) -> bool {
        matches!(self, Channels::Feature | Channels::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    /// Splats with camera-space depth at or below this are culled.
    pub z_near: f64,
    /// Added to the diagonal of every screen-space covariance before inversion.
    pub cov_dilation: f64,
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this value.
    pub min_transmittance: f64,
    /// Half-width of a splat's pixel footprint, in standard deviations.
    pub support_sigmas: f64,
    /// When set, opacity and scale are multiplied by the binary mask.
    pub masking: Option<MaskThresholds>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            z_near: 0.01,
            cov_dilation: 0.3,
            alpha_max: 0.999,
            min_transmittance: 1e-4,
            support_sigmas: 3.0,
            masking: Some(MaskThresholds::default()),
        }
    }
}

impl RenderConfig {
    pub fn without_masking(mut self) -> Self {
        self.masking = None;
        self
    }
}

/// One splat's contribution to a pixel, in compositing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    pub alpha: f64,
    /// `∂α/∂ô`: the Gaussian falloff, or zero where `α` was clamped.
    pub dalpha_dopacity: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: Option<Image>,
    pub feature: Option<Image>,
    pub alpha: Image,
    pub background: [f64; 3],
    /// `offsets[p]..offsets[p + 1]` indexes `contributions` for pixel `p`.
    pub offsets: Vec<usize>,
    pub contributions: Vec<Contribution>,
    /// Gaussians handed to the rasterizer (before depth culling).
    pub processed: usize,
    /// Splats dropped because the dilated covariance was not invertible.
    pub skipped_singular: usize,
    pub num_gaussians: usize,
    pub sem_dim: usize,
}

impl RenderOutput {
    pub fn pixel_contributions(&self, pixel: usize) -> &[Contribution] {
        &self.contributions[self.offsets[pixel]..self.offsets[pixel + 1]]
    }

    pub fn color_image(&self) -> &Image {
        self.color.as_ref().expect("color channel was not rendered")
    }

    pub fn feature_image(&self) -> &Image {
        self.feature.as_ref().expect("feature channel was not rendered")
    }
}
