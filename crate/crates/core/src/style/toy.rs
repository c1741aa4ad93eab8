//! A deterministic, differentiable stand-in for pretrained feature extractors.
//!
//! Local features are per-cell statistics over `cell x cell` pixel blocks:
//! mean RGB, mean gradient magnitude and an 8-bin soft orientation histogram
//! (12 channels). Global features blur the local ones with a wide Gaussian
//! kernel and append the normalized cell coordinates (14 channels).

use std::f64::consts::PI;

use super::feature_map::{FeatureMap, SourceTag};
use crate::raster::Image;

pub const LOCAL_CHANNELS: usize = 12;
pub const GLOBAL_CHANNELS: usize = LOCAL_CHANNELS + 2;
const BINS: usize = 8;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExtractor {
    pub cell: usize,
    /// Concentration of the von Mises orientation binning.
    pub kappa: f64,
    /// Smoothing of the gradient magnitude near zero.
    pub eps: f64,
    /// Blur standard deviation in cells for the global kind.
    pub blur_sigma: f64,
}

impl Default for ToyExtractor {
    fn default() -> Self {
        Self { cell: 4, kappa: 2.0, eps: 1e-3, blur_sigma: 2.0 }
    }
}

/// Intermediate values of the local pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LocalTape {
    width: usize,
    height: usize,
    grid_w: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    /// Smoothed gradient norm `sqrt(gx² + gy² + eps²)`.
    r: Vec<f64>,
    mag: Vec<f64>,
    /// `BINS` soft weights per pixel.
    weights: Vec<f64>,
}

fn bin_dirs() -> [(f64, f64); BINS] {
    std::array::from_fn(|b| {
        let t = 2.0 * PI * b as f64 / BINS as f64;
        (t.cos(), t.sin())
    })
}

impl ToyExtractor {
    pub fn grid_size(&self, width: usize, height: usize) -> (usize, usize) {
        (width.div_ceil(self.cell), height.div_ceil(self.cell))
    }

    fn cell_of(&self, x: usize, y: usize, grid_w: usize) -> usize {
        (y / self.cell) * grid_w + x / self.cell
    }

    fn cell_counts(&self, width: usize, height: usize) -> Vec<f64> {
        let (gw, gh) = self.grid_size(width, height);
        let mut counts = vec![0.0; gw * gh];
        for y in 0..height {
            for x in 0..width {
                counts[self.cell_of(x, y, gw)] += 1.0;
            }
        }
        counts
    }

    pub fn extract(&self, image: &Image, kind: ToyKind) -> FeatureMap {
        let (local, _) = self.local(image);
        match kind {
            ToyKind::Local => local,
            ToyKind::Global => self.global_from_local(&local),
        }
    }

    pub fn local(&self, image: &Image) -> (FeatureMap, LocalTape) {
        assert_eq!(image.channels, 3, "toy extractor expects RGB");
        let (w, h) = (image.width, image.height);
        let (gw, gh) = self.grid_size(w, h);
        let luma: Vec<f64> = (0..w * h)
            .map(|p| LUMA.iter().zip(&image.data[p * 3..p * 3 + 3]).map(|(a, b)| a * b).sum())
            .collect();
        let dirs = bin_dirs();
        let mut tape = LocalTape {
            width: w,
            height: h,
            grid_w: gw,
            gx: vec![0.0; w * h],
            gy: vec![0.0; w * h],
            r: vec![0.0; w * h],
            mag: vec![0.0; w * h],
            weights: vec![0.0; w * h * BINS],
        };
        let counts = self.cell_counts(w, h);
        let mut out = FeatureMap::zeros(gh, gw, LOCAL_CHANNELS, SourceTag::Toy);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let gx = 0.5 * (luma[y * w + xr] - luma[y * w + xl]);
                let gy = 0.5 * (luma[yd * w + x] - luma[yu * w + x]);
                let r = (gx * gx + gy * gy + self.eps * self.eps).sqrt();
                let mag = r - self.eps;
                let wts = &mut tape.weights[p * BINS..(p + 1) * BINS];
                let mut z = 0.0;
                for (wb, &(c, s)) in wts.iter_mut().zip(&dirs) {
                    *wb = (self.kappa * ((gx * c + gy * s) / r - 1.0)).exp();
                    z += *wb;
                }
                wts.iter_mut().for_each(|v| *v /= z);
                tape.gx[p] = gx;
                tape.gy[p] = gy;
                tape.r[p] = r;
                tape.mag[p] = mag;

                let cell = self.cell_of(x, y, gw);
                let inv = 1.0 / counts[cell];
                let f = out.pixel_mut(cell);
                for k in 0..3 {
                    f[k] += image.data[p * 3 + k] * inv;
                }
                f[3] += mag * inv;
                for b in 0..BINS {
                    f[4 + b] += mag * tape.weights[p * BINS + b] * inv;
                }
            }
        }
        (out, tape)
    }

    /// Gradient with respect to the RGB image given `∂L/∂local`.
    pub fn local_backward(&self, tape: &LocalTape, d_local: &FeatureMap) -> Image {
        let (w, h) = (tape.width, tape.height);
        let gw = tape.grid_w;
        let counts = self.cell_counts(w, h);
        let dirs = bin_dirs();
        let mut d_image = Image::new(w, h, 3);
        let mut d_luma = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let cell = self.cell_of(x, y, gw);
                let inv = 1.0 / counts[cell];
                let df = d_local.pixel(cell);
                for k in 0..3 {
                    d_image.data[p * 3 + k] += df[k] * inv;
                }
                let wts = &tape.weights[p * BINS..(p + 1) * BINS];
                let mag = tape.mag[p];
                let mut d_mag = df[3] * inv;
                let mut d_w = [0.0; BINS];
                for b in 0..BINS {
                    let dh = df[4 + b] * inv;
                    d_mag += dh * wts[b];
                    d_w[b] = dh * mag;
                }
                // Softmax over κ·u_b.
                let wdw: f64 = (0..BINS).map(|b| wts[b] * d_w[b]).sum();
                let (gx, gy, r) = (tape.gx[p], tape.gy[p], tape.r[p]);
                let mut d_gx = d_mag * gx / r;
                let mut d_gy = d_mag * gy / r;
                for (b, &(c, s)) in dirs.iter().enumerate() {
                    let d_u = self.kappa * wts[b] * (d_w[b] - wdw);
                    if d_u == 0.0 {
                        continue;
                    }
                    let u = (gx * c + gy * s) / r;
                    d_gx += d_u * (c - u * gx / r) / r;
                    d_gy += d_u * (s - u * gy / r) / r;
                }
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                d_luma[y * w + xr] += 0.5 * d_gx;
                d_luma[y * w + xl] -= 0.5 * d_gx;
                d_luma[yd * w + x] += 0.5 * d_gy;
                d_luma[yu * w + x] -= 0.5 * d_gy;
            }
        }
        for (p, &dl) in d_luma.iter().enumerate() {
            for k in 0..3 {
                d_image.data[p * 3 + k] += dl * LUMA[k];
            }
        }
        d_image
    }

    /// Row-normalized 1D Gaussian blur weights over `n` cells; row `i` holds
    /// `(j, weight)` pairs.
    fn blur_weights(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        let radius = (3.0 * self.blur_sigma).ceil() as isize;
        (0..n as isize)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = (-radius..=radius)
                    .filter_map(|t| {
                        let j = i + t;
                        (j >= 0 && j < n as isize).then(|| {
                            let v = (-(t * t) as f64 / (2.0 * self.blur_sigma * self.blur_sigma)).exp();
                            (j as usize, v)
                        })
                    })
                    .collect();
                let z: f64 = row.iter().map(|e| e.1).sum();
                row.iter_mut().for_each(|e| e.1 /= z);
                row
            })
            .collect()
    }

    /// Separable blur of a `gh x gw x c` buffer; `transpose` applies the adjoint.
    fn blur(&self, data: &[f64], gw: usize, gh: usize, c: usize, transpose: bool) -> Vec<f64> {
        let wx = self.blur_weights(gw);
        let wy = self.blur_weights(gh);
        let pass_x = |src: &[f64]| {
            let mut dst = vec![0.0; src.len()];
            for y in 0..gh {
                for (i, row) in wx.iter().enumerate() {
                    for &(j, wgt) in row {
                        let (to, from) = if transpose { (j, i) } else { (i, j) };
                        for k in 0..c {
                            dst[(y * gw + to) * c + k] += wgt * src[(y * gw + from) * c + k];
                        }
                    }
                }
            }
            dst
        };
        let pass_y = |src: &[f64]| {
            let mut dst = vec![0.0; src.len()];
            for (i, row) in wy.iter().enumerate() {
                for &(j, wgt) in row {
                    let (to, from) = if transpose { (j, i) } else { (i, j) };
                    for x in 0..gw {
                        for k in 0..c {
                            dst[(to * gw + x) * c + k] += wgt * src[(from * gw + x) * c + k];
                        }
                    }
                }
            }
            dst
        };
        if transpose {
            pass_x(&pass_y(data))
        } else {
            pass_y(&pass_x(data))
        }
    }

    pub fn global_from_local(&self, local: &FeatureMap) -> FeatureMap {
        let (gw, gh) = (local.width, local.height);
        let blurred = self.blur(&local.data, gw, gh, local.channels, false);
        let mut out = FeatureMap::zeros(gh, gw, local.channels + 2, SourceTag::Toy);
        for y in 0..gh {
            for x in 0..gw {
                let p = y * gw + x;
                let f = out.pixel_mut(p);
                f[..local.channels].copy_from_slice(&blurred[p * local.channels..(p + 1) * local.channels]);
                f[local.channels] = (x as f64 + 0.5) / gw as f64;
                f[local.channels + 1] = (y as f64 + 0.5) / gh as f64;
            }
        }
        out
    }

    /// `∂L/∂local` contribution from `∂L/∂global`.
    pub fn global_backward(&self, d_global: &FeatureMap) -> FeatureMap {
        let (gw, gh) = (d_global.width, d_global.height);
        let c = d_global.channels - 2;
        let mut trimmed = Vec::with_capacity(gw * gh * c);
        for p in 0..gw * gh {
            trimmed.extend_from_slice(&d_global.pixel(p)[..c]);
        }
        let data = self.blur(&trimmed, gw, gh, c, true);
        FeatureMap { height: gh, width: gw, channels: c, data, tag: SourceTag::Toy }
    }

    /// Image gradient of a loss that depends on the local and global maps of
    /// the same image.
    pub fn backward(&self, tape: &LocalTape, d_local: &FeatureMap, d_global: Option<&FeatureMap>) -> Image {
        match d_global {
            Some(dg) => {
                let mut total = self.global_backward(dg);
                for (a, b) in total.data.iter_mut().zip(&d_local.data) {
                    *a += b;
                }
                self.local_backward(tape, &total)
            }
            None => self.local_backward(tape, d_local),
        }
    }
}

/// Toy features of an RGB image with the default extractor.
pub fn toy_feature_extract(image: &Image, kind: ToyKind) -> FeatureMap {
    ToyExtractor::default().extract(image, kind)
}
