use super::project::project_covariance;
use super::{Channels, Contribution, RenderConfig, RenderOutput};
use crate::math::argmax;
use crate::raster::Image;
use crate::scene::{Camera, Scene};
use crate::semantic::{binary_mask, LabelMap};

/// Mask value and masked opacity `ô = m_b · sigmoid(opacity_logit)` of one Gaussian.
pub(crate) fn masked_opacity(scene: &Scene, index: usize, cfg: &RenderConfig) -> (f64, f64) {
    let g = &scene.gaussians[index];
    let mask = match &cfg.masking {
        Some(th) => binary_mask(g.mask_logit, &scene.class_probabilities(index), th).value,
        None => 1.0,
    };
    (mask, mask * g.opacity())
}

struct PreparedSplat {
    index: usize,
    depth: f64,
    mean: [f64; 2],
    /// Inverse of the dilated covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    x_range: (usize, usize),
    y_range: (usize, usize),
}

fn prepare(
    scene: &Scene,
    camera: &Camera,
    cfg: &RenderConfig,
    filter: &dyn Fn(usize) -> bool,
    processed: &mut usize,
    skipped: &mut usize,
) -> Vec<PreparedSplat> {
    let mut out = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        if !filter(i) {
            continue;
        }
        *processed += 1;
        let (mask, opacity) = masked_opacity(scene, i, cfg);
        let Some(splat) = project_covariance(g, g.masked_covariance(mask), i, camera, cfg.z_near) else {
            continue;
        };
        let a = splat.cov2d[(0, 0)] + cfg.cov_dilation;
        let b = splat.cov2d[(0, 1)];
        let c = splat.cov2d[(1, 1)] + cfg.cov_dilation;
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() || !(a > 0.0) {
            *skipped += 1;
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = cfg.support_sigmas * lambda_max.sqrt();
        let [mx, my] = splat.mean2d;
        // Pixel `p` has its center at `p + 0.5`.
        let lo_x = (mx - radius - 0.5).ceil().max(0.0);
        let hi_x = (mx + radius - 0.5).floor().min(camera.width as f64 - 1.0);
        let lo_y = (my - radius - 0.5).ceil().max(0.0);
        let hi_y = (my + radius - 0.5).floor().min(camera.height as f64 - 1.0);
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            continue;
        }
        out.push(PreparedSplat {
            index: i,
            depth: splat.depth,
            mean: splat.mean2d,
            conic,
            opacity,
            x_range: (lo_x as usize, hi_x as usize),
            y_range: (lo_y as usize, hi_y as usize),
        });
    }
    out.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.index.cmp(&q.index)));
    out
}

/// Renders the Gaussians accepted by `filter`.
pub fn render_filtered(
    scene: &Scene,
    camera: &Camera,
    channels: Channels,
    cfg: &RenderConfig,
    filter: &dyn Fn(usize) -> bool,
) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let d = scene.sem_dim();
    let mut processed = 0;
    let mut skipped_singular = 0;
    let splats = prepare(scene, camera, cfg, filter, &mut processed, &mut skipped_singular);

    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); w * h];
    for (k, s) in splats.iter().enumerate() {
        for y in s.y_range.0..=s.y_range.1 {
            for x in s.x_range.0..=s.x_range.1 {
                lists[y * w + x].push(k as u32);
            }
        }
    }

    let mut color = channels.color().then(|| Image::new(w, h, 3));
    let mut feature = channels.feature().then(|| Image::new(w, h, d));
    let mut alpha = Image::new(w, h, 1);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut contributions = Vec::new();
    offsets.push(0);

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            for &k in &lists[p] {
                let s = &splats[k as usize];
                let dx = px - s.mean[0];
                let dy = py - s.mean[1];
                let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
                let falloff = power.exp();
                let raw = s.opacity * falloff;
                let (a, da) = if raw > cfg.alpha_max { (cfg.alpha_max, 0.0) } else { (raw, falloff) };
                let weight = a * t;
                let g = &scene.gaussians[s.index];
                if let Some(img) = color.as_mut() {
                    for (o, &c) in img.pixel_mut(x, y).iter_mut().zip(&g.color) {
                        *o += c * weight;
                    }
                }
                if let Some(img) = feature.as_mut() {
                    for (o, &e) in img.pixel_mut(x, y).iter_mut().zip(&g.sem_feature) {
                        *o += e * weight;
                    }
                }
                contributions.push(Contribution { gaussian: s.index as u32, alpha: a, dalpha_dopacity: da });
                t *= 1.0 - a;
                if t < cfg.min_transmittance {
                    break;
                }
            }
            if let Some(img) = color.as_mut() {
                for (o, &b) in img.pixel_mut(x, y).iter_mut().zip(&scene.background) {
                    *o += t * b;
                }
            }
            alpha.data[p] = 1.0 - t;
            offsets.push(contributions.len());
        }
    }

    RenderOutput {
        width: w,
        height: h,
        color,
        feature,
        alpha,
        background: scene.background,
        offsets,
        contributions,
        processed,
        skipped_singular,
        num_gaussians: scene.len(),
        sem_dim: d,
    }
}

pub fn render(scene: &Scene, camera: &Camera, channels: Channels, cfg: &RenderConfig) -> RenderOutput {
    render_filtered(scene, camera, channels, cfg, &|_| true)
}

/// Renders only the Gaussians whose decoded class is `class_id`.
pub fn render_class_subset(
    scene: &Scene,
    camera: &Camera,
    class_id: usize,
    channels: Channels,
    cfg: &RenderConfig,
) -> RenderOutput {
    let classes = scene.classes();
    render_filtered(scene, camera, channels, cfg, &|i| classes[i] == class_id)
}

/// Per-pixel argmax class of the rendered semantic features; pixels with
/// accumulated opacity below one half are invalid.
pub fn render_label_map(scene: &Scene, camera: &Camera, cfg: &RenderConfig) -> LabelMap {
    let out = render(scene, camera, Channels::Feature, cfg);
    label_map_from_render(scene, &out)
}

pub(crate) fn label_map_from_render(scene: &Scene, out: &RenderOutput) -> LabelMap {
    let feature = out.feature_image();
    let mut labels = LabelMap::invalid(out.width, out.height);
    let mut logits = vec![0.0; scene.num_classes()];
    for y in 0..out.height {
        for x in 0..out.width {
            if out.alpha.data[y * out.width + x] < 0.5 {
                continue;
            }
            scene.class_head.logits_into(feature.pixel(x, y), &mut logits);
            // Softmax is monotone, so the argmax of the logits is the argmax of the probabilities.
            labels.set(x, y, Some(argmax(&logits) as u16));
        }
    }
    labels
}
