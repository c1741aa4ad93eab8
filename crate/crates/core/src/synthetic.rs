//! Seeded synthetic scenes, cameras and style images for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::Image;
use crate::scene::{Camera, ClassHead, Gaussian, Scene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera on the `-z` axis looking at the origin.
pub fn front_camera(width: usize, height: usize) -> Camera {
    Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0], 0.8, width, height)
        .expect("fixed camera is valid")
}

fn random_unit_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| n.sample(rng));
        let len = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 1e-3 {
            return q.map(|v| v / len);
        }
    }
}

/// A small random scene in front of [`front_camera`], with mask logits high
/// enough that every Gaussian passes the binary mask and opacities well below
/// the alpha clamp.
pub fn random_scene(rng: &mut impl Rng, n: usize, sem_dim: usize, num_classes: usize) -> Scene {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gaussians = (0..n)
        .map(|_| Gaussian {
            position: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            rotation: random_unit_quaternion(rng),
            log_scale: std::array::from_fn(|_| rng.random_range(0.06f64..0.45).ln()),
            opacity_logit: rng.random_range(-2.0..2.5),
            color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            sem_feature: (0..sem_dim).map(|_| normal.sample(rng)).collect(),
            mask_logit: rng.random_range(3.0..5.0),
        })
        .collect();
    let head = ClassHead::new(
        num_classes,
        sem_dim,
        (0..num_classes * (sem_dim + 1)).map(|_| normal.sample(rng) * 0.5).collect(),
    )
    .expect("consistent head shape");
    let background = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    Scene::new(gaussians, head, background).expect("consistent feature width")
}

/// Ground truth for the three-blob reconstruction scene.
#[derive(Debug, Clone)]
pub struct BlobScene {
    pub scene: Scene,
    /// Generator class of every Gaussian.
    pub classes: Vec<usize>,
}

pub const BLOB_COLORS: [[f64; 3]; 3] = [[0.85, 0.25, 0.2], [0.2, 0.7, 0.3], [0.25, 0.35, 0.9]];

/// Three separated clusters of Gaussians, one class each. Semantic features
/// are one-hot in the leading dimensions and the head is a scaled identity, so
/// the ground-truth classes decode exactly.
pub fn three_blob_scene(seed: u64, total: usize, sem_dim: usize) -> BlobScene {
    blob_scene(seed, total, sem_dim, 3)
}

/// Like [`three_blob_scene`] with one to three clusters.
pub fn blob_scene(seed: u64, total: usize, sem_dim: usize, num_classes: usize) -> BlobScene {
    assert!((1..=3).contains(&num_classes), "between one and three blobs");
    assert!(sem_dim >= num_classes, "one-hot features need a dimension per class");
    let mut rng = rng(seed);
    let centers = [[-0.9, 0.35, 0.0], [0.9, 0.35, 0.1], [0.0, -0.6, -0.1]];
    let spread = Normal::new(0.0, 0.22).expect("valid spread");
    let jitter = Normal::new(0.0, 0.06).expect("valid jitter");
    let mut gaussians = Vec::with_capacity(total);
    let mut classes = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % num_classes;
        let c = centers[class];
        let mut sem_feature = vec![0.0; sem_dim];
        sem_feature[class] = 1.0;
        let base = BLOB_COLORS[class];
        let shade = jitter.sample(&mut rng);
        gaussians.push(Gaussian {
            position: std::array::from_fn(|a| c[a] + spread.sample(&mut rng)),
            rotation: random_unit_quaternion(&mut rng),
            log_scale: std::array::from_fn(|_| rng.random_range(0.06f64..0.13).ln()),
            opacity_logit: rng.random_range(1.0..2.5),
            color: std::array::from_fn(|k| (base[k] + shade + jitter.sample(&mut rng)).clamp(0.02, 0.98)),
            sem_feature,
            mask_logit: 4.0,
        });
        classes.push(class);
    }
    let mut weights = vec![0.0; num_classes * (sem_dim + 1)];
    for c in 0..num_classes {
        weights[c * (sem_dim + 1) + c] = 8.0;
    }
    let head = ClassHead::new(num_classes, sem_dim, weights).expect("consistent head shape");
    let mut scene = Scene::new(gaussians, head, [0.05, 0.05, 0.08]).expect("consistent feature width");
    scene.round_to_storage();
    BlobScene { scene, classes }
}

/// `count` cameras on a ring around the origin, all looking at it.
pub fn orbit_cameras(count: usize, radius: f64, width: usize, height: usize) -> Vec<Camera> {
    (0..count)
        .map(|k| {
            let t = -0.6 + 1.2 * k as f64 / (count.max(2) - 1) as f64;
            let elevation = 0.25 * ((k % 2) as f64 - 0.5);
            let eye = [radius * t.sin(), radius * elevation, -radius * t.cos()];
            Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], 0.9, width, height).expect("ring camera is valid")
        })
        .collect()
}

/// Diagonal warm stripes.
pub fn stripe_style(width: usize, height: usize) -> Image {
    let mut img = Image::new(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            let band = ((x + y) / 3) % 2 == 0;
            let c = if band { [0.95, 0.75, 0.1] } else { [0.6, 0.1, 0.05] };
            img.pixel_mut(x, y).copy_from_slice(&c);
        }
    }
    img
}

/// Cool checkerboard.
pub fn checker_style(width: usize, height: usize) -> Image {
    let mut img = Image::new(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            let on = ((x / 4) + (y / 4)) % 2 == 0;
            let c = if on { [0.1, 0.2, 0.6] } else { [0.5, 0.9, 0.95] };
            img.pixel_mut(x, y).copy_from_slice(&c);
        }
    }
    img
}

/// Ground-truth scene, rendered training views with label maps, and an
/// initial scene that shares the ground-truth geometry but has generic
/// appearance, semantics and masks.
#[derive(Debug, Clone)]
pub struct DeskDataset {
    pub truth: BlobScene,
    pub views: Vec<crate::dataset::View>,
    pub init: Scene,
}

pub fn desk_dataset(seed: u64, gaussians: usize, views: usize, resolution: usize, sem_dim: usize) -> DeskDataset {
    use crate::render::{render, render_label_map, Channels, RenderConfig};
    let truth = three_blob_scene(seed, gaussians, sem_dim);
    let cfg = RenderConfig::default();
    let views = orbit_cameras(views, 4.0, resolution, resolution)
        .into_iter()
        .map(|camera| {
            let image = render(&truth.scene, &camera, Channels::Color, &cfg).color_image().clone();
            let labels = Some(render_label_map(&truth.scene, &camera, &cfg));
            crate::dataset::View { camera, image, labels }
        })
        .collect();
    let init = generic_appearance(&truth.scene, seed.wrapping_add(1));
    DeskDataset { truth, views, init }
}

/// Copy of `scene` with grey colors, half opacity, zero semantic features,
/// a small random head with zero bias, and moderately positive mask logits.
///
/// Zero features and bias put every Gaussian at the uniform class
/// distribution, where the entropy term is stationary, so the label maps
/// rather than the initialization decide which class each Gaussian commits to.
pub fn generic_appearance(scene: &Scene, seed: u64) -> Scene {
    let mut rng = rng(seed);
    let n = Normal::new(0.0, 0.1).expect("valid spread");
    let mut out = scene.clone();
    for g in &mut out.gaussians {
        g.color = [0.5; 3];
        g.opacity_logit = 0.0;
        g.mask_logit = 2.0;
        g.sem_feature.iter_mut().for_each(|f| *f = 0.0);
    }
    let width = out.class_head.feature_dim() + 1;
    for (k, w) in out.class_head.weights_mut().iter_mut().enumerate() {
        *w = if k % width == width - 1 { 0.0 } else { n.sample(&mut rng) };
    }
    out.round_to_storage();
    out
}
