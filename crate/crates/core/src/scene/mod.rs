//! Domain types for Gaussians, scenes and cameras.

mod camera;
mod file;
mod knn;

pub use camera::Camera;
pub use file::{load_scene, read_scene, save_scene, write_scene, SCENE_MAGIC, SCENE_VERSION};
pub use knn::knn_neighbors;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::math::{self, rotation_matrix};

/// Semantic feature width used when none is configured.
pub const DEFAULT_SEM_DIM: usize = 16;

/// One splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    /// `(w, x, y, z)`, unit norm.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    /// Direct RGB in `[0, 1]`.
    pub color: [f64; 3],
    pub sem_feature: Vec<f64>,
    pub mask_logit: f64,
}

impl Gaussian {
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            for v in &mut self.rotation {
                *v /= n;
            }
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    /// Covariance with each scale axis multiplied by `scale_factor` (the binary mask).
    pub(crate) fn masked_covariance(&self, scale_factor: f64) -> Matrix3<f64> {
        let r = rotation_matrix(self.rotation);
        let s = self.scale().map(|v| v * scale_factor);
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
        r * d * r.transpose()
    }
}

/// `Σ = R S Sᵀ Rᵀ` for a rotation quaternion `(w, x, y, z)` and per-axis scale.
pub fn covariance_from_rotation_scale(rotation: [f64; 4], scale: [f64; 3]) -> Result<Matrix3<f64>> {
    if rotation.iter().chain(&scale).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite rotation or scale"));
    }
    let qn = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if qn == 0.0 {
        return Err(Error::invalid("zero quaternion"));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("scale must be positive"));
    }
    let r = rotation_matrix(rotation);
    let ss = nalgebra::Vector3::new(scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]);
    let cov = r * Matrix3::from_diagonal(&ss) * r.transpose();
    // Symmetrize away rounding so downstream Cholesky sees an exactly symmetric matrix.
    Ok((cov + cov.transpose()) * 0.5)
}

/// The per-Gaussian class decoder: one affine layer from semantic features to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead {
    num_classes: usize,
    feature_dim: usize,
    /// Row-major `num_classes x (feature_dim + 1)`; the last column is the bias.
    weights: Vec<f64>,
}

impl ClassHead {
    pub fn new(num_classes: usize, feature_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        if weights.len() != num_classes * (feature_dim + 1) {
            return Err(Error::shape(format!(
                "class head expects {} weights, got {}",
                num_classes * (feature_dim + 1),
                weights.len()
            )));
        }
        Ok(Self { num_classes, feature_dim, weights })
    }

    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self::new(num_classes, feature_dim, vec![0.0; num_classes * (feature_dim + 1)])
            .expect("num_classes must be at least 1")
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn logits_into(&self, feature: &[f64], out: &mut [f64]) {
        let row = self.feature_dim + 1;
        for (c, o) in out.iter_mut().enumerate().take(self.num_classes) {
            let w = &self.weights[c * row..(c + 1) * row];
            *o = math::dot(&w[..self.feature_dim], feature) + w[self.feature_dim];
        }
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(feature, &mut out);
        out
    }

    pub fn probabilities(&self, feature: &[f64]) -> Vec<f64> {
        math::softmax(&self.logits(feature))
    }

    pub fn classify(&self, feature: &[f64]) -> usize {
        math::argmax(&self.logits(feature))
    }

    /// Accumulates `∂L/∂weights` and `∂L/∂feature` given `∂L/∂logits`.
    pub fn backward(
        &self,
        feature: &[f64],
        d_logits: &[f64],
        d_weights: &mut [f64],
        d_feature: Option<&mut [f64]>,
    ) {
        let row = self.feature_dim + 1;
        for (c, &g) in d_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let dw = &mut d_weights[c * row..(c + 1) * row];
            for (dwk, &ek) in dw.iter_mut().zip(feature) {
                *dwk += g * ek;
            }
            dw[self.feature_dim] += g;
        }
        if let Some(df) = d_feature {
            for (c, &g) in d_logits.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let w = &self.weights[c * row..c * row + self.feature_dim];
                for (dfk, &wk) in df.iter_mut().zip(w) {
                    *dfk += g * wk;
                }
            }
        }
    }
}

/// Ordered Gaussians plus class decoder and background.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub class_head: ClassHead,
    pub background: [f64; 3],
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>, class_head: ClassHead, background: [f64; 3]) -> Result<Self> {
        let d = class_head.feature_dim();
        if let Some(i) = gaussians.iter().position(|g| g.sem_feature.len() != d) {
            return Err(Error::shape(format!(
                "gaussian {i} has semantic feature of length {}, expected {d}",
                gaussians[i].sem_feature.len()
            )));
        }
        Ok(Self { gaussians, class_head, background })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_head.num_classes()
    }

    pub fn sem_dim(&self) -> usize {
        self.class_head.feature_dim()
    }

    pub fn class_of(&self, index: usize) -> usize {
        self.class_head.classify(&self.gaussians[index].sem_feature)
    }

    pub fn class_probabilities(&self, index: usize) -> Vec<f64> {
        self.class_head.probabilities(&self.gaussians[index].sem_feature)
    }

    pub fn classes(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.class_of(i)).collect()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.position).collect()
    }

    /// Length of the diagonal of the axis-aligned box around all centers.
    pub fn bbox_diagonal(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for g in &self.gaussians {
            for a in 0..3 {
                lo[a] = lo[a].min(g.position[a]);
                hi[a] = hi[a].max(g.position[a]);
            }
        }
        (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Rounds every parameter to `f32` so the in-memory scene equals what the file stores.
    pub fn round_to_storage(&mut self) {
        use math::to_storage as q;
        for g in &mut self.gaussians {
            for v in g
                .position
                .iter_mut()
                .chain(g.rotation.iter_mut())
                .chain(g.log_scale.iter_mut())
                .chain(g.color.iter_mut())
                .chain(g.sem_feature.iter_mut())
            {
                *v = q(*v);
            }
            g.opacity_logit = q(g.opacity_logit);
            g.mask_logit = q(g.mask_logit);
        }
        for w in self.class_head.weights_mut() {
            *w = q(*w);
        }
        for b in &mut self.background {
            *b = q(*b);
        }
    }
}
