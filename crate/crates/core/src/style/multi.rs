//! Class/style cost matrix and the semantic multi-style loss.

use super::concat::{concat_local_global, Concatenated};
use super::feature_map::FeatureMap;
use super::hungarian::{AssignmentMap, CostMatrix};
use super::nnfm::{cosine_distance, nnfm_loss_masked};
use super::toy::{LocalTape, ToyExtractor};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::render::{self, render_backward, AppearanceGrads, Channels, RenderConfig, Upstream};
use crate::scene::{Camera, Scene};
use crate::semantic::LabelMap;

#[derive(Debug, Clone)]
pub struct StyleEntry {
    pub id: String,
    /// Concatenated local-global features.
    pub features: FeatureMap,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StyleSet {
    pub styles: Vec<StyleEntry>,
}

impl StyleSet {
    /// Builds the set from per-style local and global maps.
    pub fn new(entries: Vec<(String, FeatureMap, FeatureMap)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("at least one style is required"));
        }
        let styles = entries
            .into_iter()
            .map(|(id, local, global)| {
                let features = concat_local_global(&local, &global)?.map;
                let mean = features.mean();
                Ok(StyleEntry { id, features, mean })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { styles })
    }

    /// Extracts toy local and global features from style images.
    pub fn from_images(images: &[(String, Image)], extractor: &ToyExtractor) -> Result<Self> {
        Self::new(
            images
                .iter()
                .map(|(id, img)| {
                    let (local, _) = extractor.local(img);
                    let global = extractor.global_from_local(&local);
                    (id.clone(), local, global)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }
}

/// Toy features of a rendered image, with everything needed to backpropagate
/// from the concatenated map to the pixels.
pub struct RenderedFeatures {
    pub local: FeatureMap,
    tape: LocalTape,
    pub concat: Concatenated,
}

impl RenderedFeatures {
    pub fn extract(image: &Image, extractor: &ToyExtractor) -> Result<Self> {
        let (local, tape) = extractor.local(image);
        let global = extractor.global_from_local(&local);
        let concat = concat_local_global(&local, &global)?;
        Ok(Self { local, tape, concat })
    }

    pub fn backward(&self, extractor: &ToyExtractor, d_concat: &FeatureMap) -> Image {
        let (d_local, d_global) = self.concat.backward(d_concat);
        extractor.backward(&self.tape, &d_local, Some(&d_global))
    }

    pub fn local_backward(&self, extractor: &ToyExtractor, d_local: &FeatureMap) -> Image {
        extractor.backward(&self.tape, d_local, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTerm {
    pub class: usize,
    pub style: usize,
    pub value: f64,
    /// Gaussians rasterized for this term.
    pub processed: usize,
    /// Feature cells attributed to the class.
    pub cells: usize,
}

#[derive(Debug, Clone)]
pub struct MultiStyleLoss {
    pub value: f64,
    pub terms: Vec<ClassTerm>,
    pub grads: AppearanceGrads,
}

/// Renderer and extractor settings shared by the cost matrix and the loss.
#[derive(Debug, Clone, Default)]
pub struct StyleEngine {
    pub render: RenderConfig,
    pub extractor: ToyExtractor,
}

impl StyleEngine {
    /// Full-scene label map reduced to the feature grid by majority vote.
    pub fn label_cells(&self, scene: &Scene, camera: &Camera) -> LabelMap {
        render::render_label_map(scene, camera, &self.render).downsample_majority(self.extractor.cell)
    }

    fn class_mask(cells: &LabelMap, class: usize) -> Vec<bool> {
        cells.raw().iter().map(|&v| v as usize == class).collect()
    }

    /// `Q[i][j]`: cosine distance between the mean rendered feature of class `i`
    /// (over its cells in every camera) and the mean feature of style `j`.
    /// Classes that cover no cell get a row of ones.
    pub fn cost_matrix(&self, scene: &Scene, cameras: &[Camera], styles: &StyleSet) -> Result<CostMatrix> {
        let c = scene.num_classes();
        let m = styles.len();
        let channels = styles.styles[0].features.channels;
        let mut sums = vec![vec![0.0; channels]; c];
        let mut counts = vec![0usize; c];
        for camera in cameras {
            let cells = self.label_cells(scene, camera);
            for (class, (sum, count)) in sums.iter_mut().zip(counts.iter_mut()).enumerate() {
                let mask = Self::class_mask(&cells, class);
                if !mask.iter().any(|&b| b) {
                    continue;
                }
                let out = render::render_class_subset(scene, camera, class, Channels::Color, &self.render);
                let feats = RenderedFeatures::extract(out.color_image(), &self.extractor)?;
                if feats.concat.map.channels != channels {
                    return Err(Error::shape("rendered and style features differ in channel count"));
                }
                for (p, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
                    for (s, &v) in sum.iter_mut().zip(feats.concat.map.pixel(p)) {
                        *s += v;
                    }
                    *count += 1;
                }
            }
        }
        let mut data = Vec::with_capacity(c * m);
        for (sum, &count) in sums.iter().zip(&counts) {
            if count == 0 {
                data.extend(std::iter::repeat_n(1.0, m));
                continue;
            }
            let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
            data.extend(styles.styles.iter().map(|s| cosine_distance(&mean, &s.mean)));
        }
        CostMatrix::new(c, m, data)
    }

    /// Semantic multi-style loss for one view, with label cells computed from
    /// the current scene.
    pub fn multi_style_loss(
        &self,
        scene: &Scene,
        camera: &Camera,
        styles: &StyleSet,
        assignment: &AssignmentMap,
    ) -> Result<MultiStyleLoss> {
        let cells = self.label_cells(scene, camera);
        self.multi_style_loss_with_cells(scene, camera, styles, assignment, &cells, &scene.classes())
    }

    /// Sum over classes of the NNFM loss between the class's own render,
    /// restricted to its cells, and its assigned style. `cells` and `classes`
    /// are held fixed (no gradient flows through them).
    pub fn multi_style_loss_with_cells(
        &self,
        scene: &Scene,
        camera: &Camera,
        styles: &StyleSet,
        assignment: &AssignmentMap,
        cells: &LabelMap,
        classes: &[usize],
    ) -> Result<MultiStyleLoss> {
        let c = scene.num_classes();
        if assignment.num_classes() != c {
            return Err(Error::invalid(format!(
                "assignment covers {} classes, scene has {c}",
                assignment.num_classes()
            )));
        }
        if let Some(&s) = assignment.mapping.iter().find(|&&s| s >= styles.len()) {
            return Err(Error::invalid(format!("assignment references style {s} of {}", styles.len())));
        }
        let mut total = MultiStyleLoss { value: 0.0, terms: Vec::with_capacity(c), grads: AppearanceGrads::zeros(scene.len(), scene.sem_dim()) };
        for class in 0..c {
            let style = assignment.style_of(class);
            let out = render::render_filtered(scene, camera, Channels::Color, &self.render, &|i| classes[i] == class);
            let mask = Self::class_mask(cells, class);
            let mut term = ClassTerm { class, style, value: 0.0, processed: out.processed, cells: 0 };
            let feats = RenderedFeatures::extract(out.color_image(), &self.extractor)?;
            if feats.concat.map.num_pixels() != mask.len() {
                return Err(Error::shape("label cells do not match the feature grid"));
            }
            let loss = nnfm_loss_masked(&feats.concat.map, &styles.styles[style].features, Some(&mask))?;
            term.cells = loss.selected;
            if loss.selected > 0 {
                term.value = loss.value;
                let d_image = feats.backward(&self.extractor, &loss.grad);
                let g = render_backward(scene, &self.render, &out, Upstream { color: Some(&d_image.data), feature: None })?;
                total.grads.add_assign(&g);
            }
            total.value += term.value;
            total.terms.push(term);
        }
        Ok(total)
    }
}
