//! Central finite-difference verification of analytic gradients.
//!
//! Every registered loss builds a seeded micro-instance, evaluates its analytic
//! gradient and compares it against `(f(x + ε) - f(x - ε)) / 2ε` with
//! `ε = 1e-4` in `f64`.
//!
//! The per-component relative error is `|a - n| / max(|a|, |n|, floor)` where
//! `floor = 1e-3 · max|a| + 1e-12`, so components that are negligible next to
//! the largest one are judged on the gradient's own scale.

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::render::{render, render_backward, Channels, RenderConfig, Upstream};
use crate::scene::{knn_neighbors, ClassHead, Scene};
use crate::semantic::{mask_loss, negative_entropy_loss, segmentation_loss, KnnGraph, LabelMap};
use crate::style::{
    content_loss, nnfm_loss, AssignmentMap, FeatureMap, SourceTag, StyleEngine, StyleSet, ToyExtractor,
};
use crate::synthetic;

pub const FD_EPS: f64 = 1e-4;

/// Registered loss identifiers.
pub const LOSS_IDS: &[&str] = &[
    "render-color",
    "render-opacity",
    "render-feature",
    "seg",
    "knn",
    "entropy",
    "mask",
    "nnfm",
    "content",
    "multi-style",
    "linear",
    "empty",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: String,
    pub seed: u64,
    pub num_params: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error, if any parameter exists.
    pub worst: Option<usize>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = probe[i];
            probe[i] = v + eps;
            let a = f(&probe);
            probe[i] = v - eps;
            let b = f(&probe);
            probe[i] = v;
            (a - b) / (2.0 * eps)
        })
        .collect()
}

/// Largest per-component relative error and its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, Option<usize>) {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale + 1e-12;
    let mut worst = (0.0, None);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > worst.0 || worst.1.is_none() {
            worst = (err, Some(i));
        }
    }
    worst
}

fn compare(loss: &str, seed: u64, x: &[f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> GradCheckReport {
    let numeric = central_difference(f, x, FD_EPS);
    let (max_rel_error, worst) = max_relative_error(analytic, &numeric);
    GradCheckReport { loss: loss.to_string(), seed, num_params: x.len(), max_rel_error, worst }
}

#[derive(Clone, Copy)]
enum RenderParam {
    Color,
    Opacity,
    Feature,
}

fn scene_params(scene: &Scene, which: RenderParam) -> Vec<f64> {
    match which {
        RenderParam::Color => scene.gaussians.iter().flat_map(|g| g.color).collect(),
        RenderParam::Opacity => scene.gaussians.iter().map(|g| g.opacity_logit).collect(),
        RenderParam::Feature => scene.gaussians.iter().flat_map(|g| g.sem_feature.clone()).collect(),
    }
}

fn set_scene_params(scene: &mut Scene, which: RenderParam, x: &[f64]) {
    let d = scene.sem_dim();
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        match which {
            RenderParam::Color => g.color.copy_from_slice(&x[i * 3..i * 3 + 3]),
            RenderParam::Opacity => g.opacity_logit = x[i],
            RenderParam::Feature => g.sem_feature.copy_from_slice(&x[i * d..(i + 1) * d]),
        }
    }
}

fn check_render(loss: &str, seed: u64, which: RenderParam) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let n = rng.random_range(1..=20);
    let scene = synthetic::random_scene(&mut rng, n, 4, 3);
    let camera = synthetic::front_camera(8, 8);
    let cfg = RenderConfig::default();
    let wc: Vec<f64> = (0..64 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let we: Vec<f64> = (0..64 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |s: &Scene| {
        let out = render(s, &camera, Channels::Both, &cfg);
        let c: f64 = out.color_image().data.iter().zip(&wc).map(|(a, b)| a * b).sum();
        let e: f64 = out.feature_image().data.iter().zip(&we).map(|(a, b)| a * b).sum();
        c + e
    };
    let out = render(&scene, &camera, Channels::Both, &cfg);
    let grads = render_backward(&scene, &cfg, &out, Upstream { color: Some(&wc), feature: Some(&we) })?;
    let analytic: Vec<f64> = match which {
        RenderParam::Color => grads.color.iter().flatten().copied().collect(),
        RenderParam::Opacity => grads.opacity_logit.clone(),
        RenderParam::Feature => grads.sem_feature.clone(),
    };
    let x = scene_params(&scene, which);
    let mut probe = scene.clone();
    Ok(compare(loss, seed, &x, &analytic, &mut |p| {
        set_scene_params(&mut probe, which, p);
        objective(&probe)
    }))
}

fn random_head(rng: &mut impl Rng, c: usize, d: usize) -> ClassHead {
    ClassHead::new(c, d, (0..c * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("head shape")
}

fn random_map(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect(), SourceTag::Toy)
        .expect("map shape")
}

fn check_seg(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let (w, h, d, c) = (5, 4, 4, 3);
    let feat = Image::from_data(w, h, d, (0..w * h * d).map(|_| rng.random_range(-1.5..1.5)).collect())?;
    let labels: Vec<u16> = (0..w * h)
        .map(|_| if rng.random_bool(0.2) { LabelMap::INVALID } else { rng.random_range(0..c as u16) })
        .collect();
    let labels = LabelMap::from_labels(w, h, labels)?;
    let head = random_head(&mut rng, c, d);
    let l = segmentation_loss(&feat, &labels, &head)?;
    let x: Vec<f64> = feat.data.iter().chain(head.weights()).copied().collect();
    let analytic: Vec<f64> = l.d_features.iter().chain(&l.d_head).copied().collect();
    let nf = feat.data.len();
    Ok(compare("seg", seed, &x, &analytic, &mut |p| {
        let fi = Image::from_data(w, h, d, p[..nf].to_vec()).expect("shape");
        let hd = ClassHead::new(c, d, p[nf..].to_vec()).expect("shape");
        segmentation_loss(&fi, &labels, &hd).expect("valid instance").value
    }))
}

fn check_knn(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let n = rng.random_range(6..16);
    let d = 3;
    let pos: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let graph = KnnGraph::from_neighbors(&pos, knn_neighbors(&pos, 3)?, 0.4)?;
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let l = graph.loss(&x, d);
    Ok(compare("knn", seed, &x, &l.grad, &mut |p| graph.loss(p, d).value))
}

fn check_entropy(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let (n, d, c) = (6, 3, 4);
    let head = random_head(&mut rng, c, d);
    let feats: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let l = negative_entropy_loss(&feats, &head)?;
    let x: Vec<f64> = feats.iter().chain(head.weights()).copied().collect();
    let analytic: Vec<f64> = l.d_features.iter().chain(&l.d_head).copied().collect();
    let nf = feats.len();
    Ok(compare("entropy", seed, &x, &analytic, &mut |p| {
        let hd = ClassHead::new(c, d, p[nf..].to_vec()).expect("shape");
        negative_entropy_loss(&p[..nf], &hd).expect("valid instance").value
    }))
}

fn check_mask(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let x: Vec<f64> = (0..10).map(|_| rng.random_range(-4.0..4.0)).collect();
    let l = mask_loss(&x);
    Ok(compare("mask", seed, &x, &l.grad, &mut |p| mask_loss(p).value))
}

fn check_nnfm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let r = random_map(&mut rng, 4, 4, 6);
    let s = random_map(&mut rng, 5, 5, 6);
    let l = nnfm_loss(&r, &s)?;
    let mut probe = r.clone();
    Ok(compare("nnfm", seed, &r.data, &l.grad.data, &mut |p| {
        probe.data.copy_from_slice(p);
        nnfm_loss(&probe, &s).expect("valid instance").value
    }))
}

fn check_content(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let r = random_map(&mut rng, 3, 4, 5);
    let t = random_map(&mut rng, 3, 4, 5);
    let l = content_loss(&r, &t)?;
    let mut probe = r.clone();
    Ok(compare("content", seed, &r.data, &l.grad.data, &mut |p| {
        probe.data.copy_from_slice(p);
        content_loss(&probe, &t).expect("valid instance").value
    }))
}

/// Two-class scene whose Gaussians are split by the sign of the first
/// semantic feature.
fn two_class_scene(rng: &mut impl Rng, n: usize) -> Scene {
    let mut scene = synthetic::random_scene(rng, n, 2, 2);
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        g.sem_feature = vec![if i % 2 == 0 { 2.0 } else { -2.0 }, 0.0];
        g.position[0] = 0.5 * g.position[0] + if i % 2 == 0 { -0.45 } else { 0.45 };
        g.log_scale = g.log_scale.map(|s| s + 0.5);
    }
    scene.class_head = ClassHead::new(2, 2, vec![3.0, 0.0, 0.0, -3.0, 0.0, 0.0]).expect("head shape");
    scene
}

fn check_multi_style(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let scene = two_class_scene(&mut rng, 14);
    let camera = synthetic::front_camera(16, 16);
    let engine = StyleEngine::default();
    let ex = ToyExtractor::default();
    let styles = StyleSet::from_images(
        &[
            ("stripes".into(), synthetic::stripe_style(16, 16)),
            ("checker".into(), synthetic::checker_style(16, 16)),
        ],
        &ex,
    )?;
    let assignment = AssignmentMap::new(vec![1, 0], 2)?;
    let cells = engine.label_cells(&scene, &camera);
    let classes = scene.classes();
    let l = engine.multi_style_loss_with_cells(&scene, &camera, &styles, &assignment, &cells, &classes)?;
    let x: Vec<f64> = scene_params(&scene, RenderParam::Color)
        .into_iter()
        .chain(scene_params(&scene, RenderParam::Opacity))
        .collect();
    let analytic: Vec<f64> =
        l.grads.color.iter().flatten().copied().chain(l.grads.opacity_logit.iter().copied()).collect();
    let nc = scene.len() * 3;
    let mut probe = scene.clone();
    Ok(compare("multi-style", seed, &x, &analytic, &mut |p| {
        set_scene_params(&mut probe, RenderParam::Color, &p[..nc]);
        set_scene_params(&mut probe, RenderParam::Opacity, &p[nc..]);
        engine
            .multi_style_loss_with_cells(&probe, &camera, &styles, &assignment, &cells, &classes)
            .expect("valid instance")
            .value
    }))
}

fn check_linear(seed: u64) -> Result<GradCheckReport> {
    let mut rng = synthetic::rng(seed);
    let a: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok(compare("linear", seed, &x, &a, &mut |p| p.iter().zip(&a).map(|(u, v)| u * v).sum()))
}

/// Runs the finite-difference check for one registered loss.
pub fn check_gradients(loss: &str, seed: u64) -> Result<GradCheckReport> {
    match loss {
        "render-color" => check_render(loss, seed, RenderParam::Color),
        "render-opacity" => check_render(loss, seed, RenderParam::Opacity),
        "render-feature" => check_render(loss, seed, RenderParam::Feature),
        "seg" => check_seg(seed),
        "knn" => check_knn(seed),
        "entropy" => check_entropy(seed),
        "mask" => check_mask(seed),
        "nnfm" => check_nnfm(seed),
        "content" => check_content(seed),
        "multi-style" => check_multi_style(seed),
        "linear" => check_linear(seed),
        "empty" => Ok(compare("empty", seed, &[], &[], &mut |_| 0.0)),
        other => Err(Error::invalid(format!("unknown loss id {other:?}; known: {}", LOSS_IDS.join(", ")))),
    }
}
