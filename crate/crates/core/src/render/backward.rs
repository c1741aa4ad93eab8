use super::forward::masked_opacity;
use super::{RenderConfig, RenderOutput};
use crate::error::{Error, Result};
use crate::math::{sigmoid, sigmoid_grad};
use crate::scene::Scene;

/// Upstream gradients of a scalar loss with respect to the rendered images.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    /// `H x W x 3`, row-major.
    pub color: Option<&'a [f64]>,
    /// `H x W x D_e`, row-major.
    pub feature: Option<&'a [f64]>,
}

/// Per-Gaussian gradients of the appearance parameters.
///
/// Geometry (position, rotation, scale) is frozen in both training stages and
/// receives no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceGrads {
    pub color: Vec<[f64; 3]>,
    pub opacity_logit: Vec<f64>,
    /// `N x D_e`, row-major.
    pub sem_feature: Vec<f64>,
    /// Straight-through gradient through `ô = m_b · o`; zero when masking is off.
    pub mask_logit: Vec<f64>,
}

impl AppearanceGrads {
    pub fn zeros(n: usize, sem_dim: usize) -> Self {
        Self {
            color: vec![[0.0; 3]; n],
            opacity_logit: vec![0.0; n],
            sem_feature: vec![0.0; n * sem_dim],
            mask_logit: vec![0.0; n],
        }
    }

    pub fn add_assign(&mut self, other: &AppearanceGrads) {
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self
            .opacity_logit
            .iter_mut()
            .zip(&other.opacity_logit)
            .chain(self.sem_feature.iter_mut().zip(&other.sem_feature))
            .chain(self.mask_logit.iter_mut().zip(&other.mask_logit))
        {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.color {
            for v in c.iter_mut() {
                *v *= factor;
            }
        }
        for v in self.opacity_logit.iter_mut().chain(&mut self.sem_feature).chain(&mut self.mask_logit) {
            *v *= factor;
        }
    }
}

/// Reverse-mode pass through the compositing of `output`.
///
/// `scene` and `cfg` must be the ones the forward pass used.
pub fn render_backward(
    scene: &Scene,
    cfg: &RenderConfig,
    output: &RenderOutput,
    upstream: Upstream<'_>,
) -> Result<AppearanceGrads> {
    let pixels = output.width * output.height;
    let d = output.sem_dim;
    if output.num_gaussians != scene.len() || d != scene.sem_dim() {
        return Err(Error::shape("render output does not belong to this scene"));
    }
    if let Some(gc) = upstream.color {
        if output.color.is_none() {
            return Err(Error::shape("color gradient given but color was not rendered"));
        }
        if gc.len() != pixels * 3 {
            return Err(Error::shape(format!("color gradient has {} values, expected {}", gc.len(), pixels * 3)));
        }
    }
    if let Some(ge) = upstream.feature {
        if output.feature.is_none() {
            return Err(Error::shape("feature gradient given but features were not rendered"));
        }
        if ge.len() != pixels * d {
            return Err(Error::shape(format!("feature gradient has {} values, expected {}", ge.len(), pixels * d)));
        }
    }

    let n = scene.len();
    let mut grads = AppearanceGrads::zeros(n, d);
    let mut d_opacity = vec![0.0; n];
    let mut prefix_t = Vec::new();
    let mut acc_e = vec![0.0; d];

    for p in 0..pixels {
        let list = output.pixel_contributions(p);
        if list.is_empty() {
            continue;
        }
        let gc = upstream.color.map(|g| &g[p * 3..p * 3 + 3]);
        let ge = upstream.feature.map(|g| &g[p * d..(p + 1) * d]);
        if gc.is_none_or(|g| g.iter().all(|&v| v == 0.0)) && ge.is_none_or(|g| g.iter().all(|&v| v == 0.0)) {
            continue;
        }
        prefix_t.clear();
        let mut t = 1.0;
        for c in list {
            prefix_t.push(t);
            t *= 1.0 - c.alpha;
        }
        // Back-to-front: `acc` is the composite of everything behind the current splat.
        let mut acc_c = output.background;
        acc_e.iter_mut().for_each(|v| *v = 0.0);
        for (c, &t_k) in list.iter().zip(&prefix_t).rev() {
            let i = c.gaussian as usize;
            let g = &scene.gaussians[i];
            let mut d_alpha = 0.0;
            if let Some(gc) = gc {
                let w = c.alpha * t_k;
                for k in 0..3 {
                    grads.color[i][k] += gc[k] * w;
                    d_alpha += gc[k] * (g.color[k] - acc_c[k]);
                    acc_c[k] = c.alpha * g.color[k] + (1.0 - c.alpha) * acc_c[k];
                }
            }
            if let Some(ge) = ge {
                let w = c.alpha * t_k;
                let row = &mut grads.sem_feature[i * d..(i + 1) * d];
                for k in 0..d {
                    row[k] += ge[k] * w;
                    d_alpha += ge[k] * (g.sem_feature[k] - acc_e[k]);
                    acc_e[k] = c.alpha * g.sem_feature[k] + (1.0 - c.alpha) * acc_e[k];
                }
            }
            d_opacity[i] += t_k * d_alpha * c.dalpha_dopacity;
        }
    }

    for (i, &dop) in d_opacity.iter().enumerate() {
        if dop == 0.0 {
            continue;
        }
        let g = &scene.gaussians[i];
        let (mask, _) = masked_opacity(scene, i, cfg);
        grads.opacity_logit[i] = dop * mask * sigmoid_grad(g.opacity_logit);
        if cfg.masking.is_some() {
            grads.mask_logit[i] = dop * sigmoid(g.opacity_logit) * sigmoid_grad(g.mask_logit);
        }
    }
    Ok(grads)
}
