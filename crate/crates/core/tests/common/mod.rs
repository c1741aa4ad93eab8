//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use msgs_core::scene::{Camera, Scene};

/// Straight-line scalar evaluation of color, feature and alpha images.
///
/// Every quantity is recomputed from the raw parameters: quaternion to matrix
/// by the textbook formula, the pinhole Jacobian written out by hand, a full
/// sort of all splats, and compositing over every splat with no early exit.
pub struct Reference {
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub struct RefParams {
    pub z_near: f64,
    pub dilation: f64,
    pub alpha_max: f64,
    pub sigmas: f64,
    /// `(eps0, eps1)`, or `None` to ignore masks.
    pub mask: Option<(f64, f64)>,
}

impl Default for RefParams {
    fn default() -> Self {
        Self { z_near: 0.01, dilation: 0.3, alpha_max: 0.999, sigmas: 3.0, mask: Some((0.01, 0.9)) }
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn class_probs(scene: &Scene, e: &[f64]) -> Vec<f64> {
    let c = scene.class_head.num_classes();
    let d = scene.class_head.feature_dim();
    let w = scene.class_head.weights();
    let z: Vec<f64> = (0..c)
        .map(|k| {
            let row = &w[k * (d + 1)..(k + 1) * (d + 1)];
            row[d] + (0..d).map(|j| row[j] * e[j]).sum::<f64>()
        })
        .collect();
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|v| v / s).collect()
}

pub fn quat_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                o[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    o
}

fn transpose3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = a[j][i];
        }
    }
    o
}

struct RefSplat {
    depth: f64,
    index: usize,
    u: f64,
    v: f64,
    inv: [f64; 3],
    radius: f64,
    opacity: f64,
}

pub fn reference_render(scene: &Scene, cam: &Camera, p: &RefParams) -> Reference {
    let (w, h) = (cam.width, cam.height);
    let d = scene.sem_dim();
    let rc: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| cam.rotation[(i, j)]));
    let mut splats = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        let mb = match p.mask {
            None => 1.0,
            Some((e0, e1)) => {
                let pmax = class_probs(scene, &g.sem_feature).into_iter().fold(0.0, f64::max);
                if sig(g.mask_logit) > e0 || pmax > e1 { 1.0 } else { 0.0 }
            }
        };
        let opacity = mb * sig(g.opacity_logit);
        let r = quat_matrix(g.rotation);
        let mut s2 = [[0.0; 3]; 3];
        for k in 0..3 {
            let s = mb * g.log_scale[k].exp();
            s2[k][k] = s * s;
        }
        let sigma = mul3(&mul3(&r, &s2), &transpose3(&r));
        let pc: [f64; 3] = std::array::from_fn(|a| {
            (0..3).map(|b| rc[a][b] * g.position[b]).sum::<f64>() + cam.translation[a]
        });
        if pc[2] <= p.z_near {
            continue;
        }
        let (x, y, z) = (pc[0], pc[1], pc[2]);
        let jac = [[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]];
        let m = mul3(&mul3(&rc, &sigma), &transpose3(&rc));
        let mut c2 = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for k in 0..3 {
                    for l in 0..3 {
                        c2[a][b] += jac[a][k] * m[k][l] * jac[b][l];
                    }
                }
            }
        }
        let a = c2[0][0] + p.dilation;
        let b = 0.5 * (c2[0][1] + c2[1][0]);
        let c = c2[1][1] + p.dilation;
        let det = a * c - b * b;
        if det <= 0.0 {
            continue;
        }
        let lmax = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        splats.push(RefSplat {
            depth: z,
            index: i,
            u: cam.fx * x / z + cam.cx,
            v: cam.fy * y / z + cam.cy,
            inv: [c / det, -b / det, a / det],
            radius: p.sigmas * lmax.sqrt(),
            opacity,
        });
    }
    splats.sort_by(|p, q| p.depth.partial_cmp(&q.depth).unwrap().then(p.index.cmp(&q.index)));

    let mut out = Reference { color: vec![0.0; w * h * 3], feature: vec![0.0; w * h * d], alpha: vec![0.0; w * h] };
    for py in 0..h {
        for px in 0..w {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let pix = py * w + px;
            let mut t = 1.0;
            for s in &splats {
                let (dx, dy) = (cx - s.u, cy - s.v);
                if dx.abs() > s.radius || dy.abs() > s.radius {
                    continue;
                }
                let q = s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy;
                let alpha = (s.opacity * (-0.5 * q).exp()).min(p.alpha_max);
                let g = &scene.gaussians[s.index];
                for k in 0..3 {
                    out.color[pix * 3 + k] += g.color[k] * alpha * t;
                }
                for k in 0..d {
                    out.feature[pix * d + k] += g.sem_feature[k] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            for k in 0..3 {
                out.color[pix * 3 + k] += t * scene.background[k];
            }
            out.alpha[pix] = 1.0 - t;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
