//! Two-stage optimization: reconstruction of appearance, semantics and masks
//! with geometry frozen, then stylization of appearance under a class-to-style
//! assignment.

mod adam;
mod config;
mod report;

pub use adam::{AdamParams, AdamState};
pub use config::TrainConfig;
pub use report::{LossReport, LossRow};

use crate::dataset::View;
use crate::error::{Error, Result};
use crate::math::psnr;
use crate::raster::Image;
use crate::render::{render, render_backward, AppearanceGrads, Channels, RenderConfig, Upstream};
use crate::scene::{save_scene, Scene};
use crate::semantic::{mask_loss, negative_entropy_loss, prune, segmentation_loss, KnnGraph};
use crate::style::{content_loss, AssignmentMap, FeatureMap, StyleEngine, StyleSet, ToyExtractor};

/// Outcome of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub scene: Scene,
    pub report: LossReport,
    /// Original index of every surviving Gaussian.
    pub kept: Vec<usize>,
    /// Mean PSNR over all views after the final step.
    pub final_psnr: f64,
}

fn render_config(cfg: &TrainConfig) -> RenderConfig {
    RenderConfig { masking: Some(cfg.mask.thresholds), ..RenderConfig::default() }
}

fn adam_params(cfg: &TrainConfig) -> AdamParams {
    AdamParams { beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps }
}

/// Mean PSNR of the scene's color renders against every view image.
pub fn mean_psnr(scene: &Scene, views: &[View], render_cfg: &RenderConfig) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::invalid("no views to evaluate"));
    }
    let mut sum = 0.0;
    for v in views {
        let out = render(scene, &v.camera, Channels::Color, render_cfg);
        sum += psnr(out.color_image().mse(&v.image)?);
    }
    Ok(sum / views.len() as f64)
}

fn class_counts(scene: &Scene) -> Vec<usize> {
    let mut counts = vec![0; scene.num_classes()];
    for c in scene.classes() {
        counts[c] += 1;
    }
    counts
}

fn check_views(views: &[View]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::invalid("training needs at least one view"));
    }
    for v in views {
        if v.image.width != v.camera.width || v.image.height != v.camera.height || v.image.channels != 3 {
            return Err(Error::shape("view image does not match its camera"));
        }
    }
    Ok(())
}

fn abort(cfg: &TrainConfig, scene: &Scene, iteration: usize, detail: String) -> Error {
    let detail = match &cfg.snapshot_path {
        Some(p) => match save_scene(scene, p) {
            Ok(()) => format!("{detail}; snapshot written to {}", p.display()),
            Err(e) => format!("{detail}; snapshot failed: {e}"),
        },
        None => detail,
    };
    Error::NonFinite { iteration, detail }
}

fn knn_graph(scene: &Scene, cfg: &TrainConfig) -> Result<Option<KnnGraph>> {
    if scene.len() < 2 || cfg.lambda_knn == 0.0 {
        return Ok(None);
    }
    let k = cfg.knn_k.min(scene.len() - 1);
    let sigma = (scene.bbox_diagonal() * cfg.knn_sigma_fraction).max(1e-12);
    Ok(Some(KnnGraph::build(&scene.positions(), k, sigma)?))
}

/// Mean squared error over all channels and its gradient.
fn mse_grad(rendered: &Image, target: &Image) -> Result<(f64, Vec<f64>)> {
    let value = rendered.mse(target)?;
    let n = rendered.data.len() as f64;
    let grad = rendered.data.iter().zip(&target.data).map(|(r, t)| 2.0 * (r - t) / n).collect();
    Ok((value, grad))
}

/// Flat per-group parameter views of a scene; the head is its own group.
struct Groups {
    color: AdamState,
    opacity: AdamState,
    sem: AdamState,
    mask: AdamState,
    head: AdamState,
}

impl Groups {
    fn new(scene: &Scene) -> Self {
        let n = scene.len();
        Self {
            color: AdamState::new(n * 3),
            opacity: AdamState::new(n),
            sem: AdamState::new(n * scene.sem_dim()),
            mask: AdamState::new(n),
            head: AdamState::new(scene.class_head.num_params()),
        }
    }

    fn retain(&mut self, kept: &[usize], sem_dim: usize) {
        self.color.retain_rows(kept, 3);
        self.opacity.retain_rows(kept, 1);
        self.sem.retain_rows(kept, sem_dim);
        self.mask.retain_rows(kept, 1);
    }
}

fn step_colors(scene: &mut Scene, state: &mut AdamState, grads: &[[f64; 3]], lr: f64, hp: &AdamParams, t: u64) {
    let mut p: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.color).collect();
    let g: Vec<f64> = grads.iter().flatten().copied().collect();
    state.step(&mut p, &g, lr, hp, t);
    for (gs, c) in scene.gaussians.iter_mut().zip(p.chunks_exact(3)) {
        gs.color = [c[0], c[1], c[2]].map(|v| v.clamp(0.0, 1.0));
    }
}

fn step_scalar(
    scene: &mut Scene,
    state: &mut AdamState,
    grads: &[f64],
    lr: f64,
    hp: &AdamParams,
    t: u64,
    field: fn(&mut crate::scene::Gaussian) -> &mut f64,
) {
    let mut p: Vec<f64> = scene.gaussians.iter_mut().map(|g| *field(g)).collect();
    state.step(&mut p, grads, lr, hp, t);
    for (g, v) in scene.gaussians.iter_mut().zip(p) {
        *field(g) = v;
    }
}

/// Optimizes color, opacity, semantic features, mask logits and the class head
/// with geometry frozen. Views are visited round-robin, one per iteration.
/// Gaussians whose binary mask is zero are pruned after each iteration listed
/// in the mask schedule (1-based counts of completed steps).
pub fn reconstruct(views: &[View], init: Scene, cfg: &TrainConfig) -> Result<Reconstruction> {
    check_views(views)?;
    cfg.validate()?;
    let render_cfg = render_config(cfg);
    let hp = adam_params(cfg);
    let mut scene = init;
    let mut kept: Vec<usize> = (0..scene.len()).collect();
    let mut groups = Groups::new(&scene);
    let mut graph = knn_graph(&scene, cfg)?;
    let mut report = LossReport::new(scene.num_classes());
    let d = scene.sem_dim();

    for it in 0..cfg.recon_iters {
        let vi = it % views.len();
        let view = &views[vi];
        let out = render(&scene, &view.camera, Channels::Both, &render_cfg);
        let (recon, d_color) = mse_grad(out.color_image(), &view.image)?;

        let mut d_head = vec![0.0; scene.class_head.num_params()];
        let mut seg = 0.0;
        let mut d_feature = None;
        if let (Some(labels), true) = (&view.labels, cfg.lambda_seg > 0.0) {
            let l = segmentation_loss(out.feature_image(), labels, &scene.class_head)?;
            seg = l.value;
            d_feature = Some(l.d_features.iter().map(|g| g * cfg.lambda_seg).collect::<Vec<_>>());
            for (a, b) in d_head.iter_mut().zip(&l.d_head) {
                *a += cfg.lambda_seg * b;
            }
        }
        let mut grads = render_backward(
            &scene,
            &render_cfg,
            &out,
            Upstream { color: Some(&d_color), feature: d_feature.as_deref() },
        )?;

        let features: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.sem_feature.iter().copied()).collect();
        let mut knn = 0.0;
        if let Some(graph) = &graph {
            let l = graph.loss(&features, d);
            knn = l.value;
            for (a, b) in grads.sem_feature.iter_mut().zip(&l.grad) {
                *a += cfg.lambda_knn * b;
            }
        }
        // The entropy term reaches the features only. Letting it move the shared
        // head lowers every Gaussian's entropy at once by collapsing classes.
        let mut ne = 0.0;
        if cfg.lambda_ne > 0.0 {
            let l = negative_entropy_loss(&features, &scene.class_head)?;
            ne = l.value;
            for (a, b) in grads.sem_feature.iter_mut().zip(&l.d_features) {
                *a += cfg.lambda_ne * b;
            }
        }
        let logits: Vec<f64> = scene.gaussians.iter().map(|g| g.mask_logit).collect();
        let ml = mask_loss(&logits);
        for (a, b) in grads.mask_logit.iter_mut().zip(&ml.grad) {
            *a += cfg.lambda_mask * b;
        }

        let total = recon + cfg.lambda_seg * seg + cfg.lambda_knn * knn + cfg.lambda_ne * ne + cfg.lambda_mask * ml.value;
        if !total.is_finite() {
            let detail = format!("recon={recon} seg={seg} knn={knn} ne={ne} mask={}", ml.value);
            return Err(abort(cfg, &scene, it, detail));
        }
        let eval = it % cfg.eval_every == 0;
        report.push(LossRow {
            iteration: it,
            view: vi,
            total,
            recon,
            seg,
            knn,
            ne,
            mask: ml.value,
            psnr: if eval { Some(mean_psnr(&scene, views, &render_cfg)?) } else { None },
            num_gaussians: scene.len(),
            processed: class_counts(&scene),
            ..Default::default()
        });

        let t = it as u64 + 1;
        step_colors(&mut scene, &mut groups.color, &grads.color, cfg.lr_color, &hp, t);
        step_scalar(&mut scene, &mut groups.opacity, &grads.opacity_logit, cfg.lr_opacity, &hp, t, |g| &mut g.opacity_logit);
        step_scalar(&mut scene, &mut groups.mask, &grads.mask_logit, cfg.lr_mask, &hp, t, |g| &mut g.mask_logit);
        let mut sem: Vec<f64> = features;
        groups.sem.step(&mut sem, &grads.sem_feature, cfg.lr_sem, &hp, t);
        for (g, f) in scene.gaussians.iter_mut().zip(sem.chunks_exact(d.max(1))) {
            g.sem_feature.copy_from_slice(&f[..d]);
        }
        groups.head.step(scene.class_head.weights_mut(), &d_head, cfg.lr_head, &hp, t);
        scene.round_to_storage();

        if cfg.mask.prune_iterations.contains(&(it + 1)) {
            let survivors = prune(&mut scene, &cfg.mask.thresholds)?;
            if survivors.len() < kept.len() {
                groups.retain(&survivors, d);
                kept = survivors.iter().map(|&i| kept[i]).collect();
                graph = knn_graph(&scene, cfg)?;
            }
        }
    }
    let final_psnr = mean_psnr(&scene, views, &render_cfg)?;
    Ok(Reconstruction { scene, report, kept, final_psnr })
}

/// Toy local features of each view image, the stylization content target.
fn content_targets(views: &[View], extractor: &ToyExtractor) -> Vec<FeatureMap> {
    views.iter().map(|v| extractor.local(&v.image).0).collect()
}

/// Optimizes color (and opacity unless disabled) under
/// `λ_cont · content + λ_style · multi-style`. Semantic features, masks,
/// geometry and the class head are never written. Views are visited
/// round-robin; each view's image is its content target.
pub fn stylize(
    views: &[View],
    scene: Scene,
    styles: &StyleSet,
    assignment: &AssignmentMap,
    cfg: &TrainConfig,
) -> Result<(Scene, LossReport)> {
    check_views(views)?;
    cfg.validate()?;
    let render_cfg = render_config(cfg);
    let engine = StyleEngine { render: render_cfg.clone(), extractor: ToyExtractor::default() };
    if assignment.num_classes() != scene.num_classes() {
        return Err(Error::invalid(format!(
            "assignment covers {} classes, scene has {}",
            assignment.num_classes(),
            scene.num_classes()
        )));
    }
    if let Some(&s) = assignment.mapping.iter().find(|&&s| s >= styles.len()) {
        return Err(Error::invalid(format!("assignment references style {s} of {}", styles.len())));
    }
    let targets = content_targets(views, &engine.extractor);
    let hp = adam_params(cfg);
    let mut scene = scene;
    let mut groups = Groups::new(&scene);
    let mut report = LossReport::new(scene.num_classes());

    for it in 0..cfg.stylize_iters {
        let vi = it % views.len();
        let camera = &views[vi].camera;
        let mut grads = AppearanceGrads::zeros(scene.len(), scene.sem_dim());

        let mut content = 0.0;
        if cfg.lambda_content > 0.0 {
            let out = render(&scene, camera, Channels::Color, &render_cfg);
            let (local, tape) = engine.extractor.local(out.color_image());
            let l = content_loss(&local, &targets[vi])?;
            content = l.value;
            let d_image = engine.extractor.local_backward(&tape, &l.grad);
            let g = render_backward(&scene, &render_cfg, &out, Upstream { color: Some(&d_image.data), feature: None })?;
            grads.add_assign(&g);
            grads.scale(cfg.lambda_content);
        }

        let multi = engine.multi_style_loss(&scene, camera, styles, assignment)?;
        if cfg.lambda_style > 0.0 {
            let mut g = multi.grads.clone();
            g.scale(cfg.lambda_style);
            grads.add_assign(&g);
        }
        let total = cfg.lambda_content * content + cfg.lambda_style * multi.value;
        if !total.is_finite() {
            return Err(abort(cfg, &scene, it, format!("content={content} style={}", multi.value)));
        }
        report.push(LossRow {
            iteration: it,
            view: vi,
            total,
            content,
            style: multi.value,
            num_gaussians: scene.len(),
            processed: multi.terms.iter().map(|t| t.processed).collect(),
            ..Default::default()
        });

        let t = it as u64 + 1;
        step_colors(&mut scene, &mut groups.color, &grads.color, cfg.lr_color, &hp, t);
        if cfg.stylize_opacity {
            step_scalar(&mut scene, &mut groups.opacity, &grads.opacity_logit, cfg.lr_opacity, &hp, t, |g| &mut g.opacity_logit);
        }
        scene.round_to_storage();
    }
    Ok((scene, report))
}
