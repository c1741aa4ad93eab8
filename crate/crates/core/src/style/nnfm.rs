//! Nearest-neighbour feature matching and the content loss.

use super::feature_map::FeatureMap;
use crate::error::{Error, Result};
use crate::math::{dot, norm};

pub const COSINE_EPS: f64 = 1e-8;

/// `1 - f·g / (|f||g| + ε)`.
pub fn cosine_distance(f: &[f64], g: &[f64]) -> f64 {
    1.0 - dot(f, g) / (norm(f) * norm(g) + COSINE_EPS)
}

/// Accumulates `scale · ∂d(f, g)/∂f` into `out`.
fn cosine_distance_grad(f: &[f64], g: &[f64], g_norm: f64, scale: f64, out: &mut [f64]) {
    let nf = norm(f);
    let a = dot(f, g);
    let b = nf * g_norm + COSINE_EPS;
    let radial = if nf > 0.0 { a * g_norm / (nf * b * b) } else { 0.0 };
    for ((o, &fi), &gi) in out.iter_mut().zip(f).zip(g) {
        *o += scale * (-gi / b + radial * fi);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnfmLoss {
    pub value: f64,
    /// Same shape as the rendered map.
    pub grad: FeatureMap,
    /// Nearest style pixel for every selected rendered pixel, `None` elsewhere.
    pub nearest: Vec<Option<usize>>,
    pub selected: usize,
}

/// Mean over rendered pixels of the cosine distance to the nearest style pixel.
pub fn nnfm_loss(rendered: &FeatureMap, style: &FeatureMap) -> Result<NnfmLoss> {
    nnfm_loss_masked(rendered, style, None)
}

/// [`nnfm_loss`] restricted to rendered pixels with `mask[p] == true`.
///
/// The nearest-neighbour index is treated as a constant in the backward pass.
/// With no selected pixel the loss is zero.
pub fn nnfm_loss_masked(rendered: &FeatureMap, style: &FeatureMap, mask: Option<&[bool]>) -> Result<NnfmLoss> {
    if rendered.channels != style.channels {
        return Err(Error::shape(format!(
            "rendered features have {} channels, style features {}",
            rendered.channels, style.channels
        )));
    }
    if style.num_pixels() == 0 {
        return Err(Error::shape("style feature map is empty"));
    }
    if let Some(m) = mask {
        if m.len() != rendered.num_pixels() {
            return Err(Error::shape("mask does not match rendered grid"));
        }
    }
    let style_norms: Vec<f64> = (0..style.num_pixels()).map(|q| norm(style.pixel(q))).collect();
    let selected: Vec<usize> =
        (0..rendered.num_pixels()).filter(|&p| mask.is_none_or(|m| m[p])).collect();
    let mut out = NnfmLoss {
        value: 0.0,
        grad: FeatureMap { data: vec![0.0; rendered.data.len()], ..rendered.clone() },
        nearest: vec![None; rendered.num_pixels()],
        selected: selected.len(),
    };
    if selected.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / selected.len() as f64;
    for &p in &selected {
        let f = rendered.pixel(p);
        let nf = norm(f);
        let mut best = (f64::INFINITY, 0);
        for q in 0..style.num_pixels() {
            let d = 1.0 - dot(f, style.pixel(q)) / (nf * style_norms[q] + COSINE_EPS);
            if d < best.0 {
                best = (d, q);
            }
        }
        out.value += best.0 * inv;
        out.nearest[p] = Some(best.1);
        cosine_distance_grad(f, style.pixel(best.1), style_norms[best.1], inv, out.grad.pixel_mut(p));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentLoss {
    pub value: f64,
    pub grad: FeatureMap,
}

/// Mean squared difference over every entry.
pub fn content_loss(rendered: &FeatureMap, target: &FeatureMap) -> Result<ContentLoss> {
    if !rendered.same_shape(target) {
        return Err(Error::shape(format!(
            "content maps differ: {}x{}x{} vs {}x{}x{}",
            rendered.height, rendered.width, rendered.channels, target.height, target.width, target.channels
        )));
    }
    let n = rendered.data.len().max(1) as f64;
    let mut value = 0.0;
    let grad = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            value += (a - b) * (a - b) / n;
            2.0 * (a - b) / n
        })
        .collect();
    Ok(ContentLoss { value, grad: FeatureMap { data: grad, ..rendered.clone() } })
}
