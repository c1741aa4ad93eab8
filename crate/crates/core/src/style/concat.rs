//! Local-global feature concatenation.

use super::feature_map::FeatureMap;
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-8;

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resample_bilinear(map: &FeatureMap, height: usize, width: usize) -> Result<FeatureMap> {
    if map.height == 0 || map.width == 0 || height == 0 || width == 0 {
        return Err(Error::shape("cannot resample an empty grid"));
    }
    let mut out = FeatureMap::zeros(height, width, map.channels, map.tag);
    for_each_tap(map, height, width, |dst, src, wgt| {
        for k in 0..map.channels {
            out.data[dst * map.channels + k] += wgt * map.data[src * map.channels + k];
        }
    });
    Ok(out)
}

/// Adjoint of [`resample_bilinear`]: scatters `d_out` back onto the source grid.
pub fn resample_bilinear_backward(d_out: &FeatureMap, src_height: usize, src_width: usize) -> FeatureMap {
    let shape = FeatureMap::zeros(src_height, src_width, d_out.channels, d_out.tag);
    let mut d_src = shape.clone();
    for_each_tap(&shape, d_out.height, d_out.width, |dst, src, wgt| {
        for k in 0..d_out.channels {
            d_src.data[src * d_out.channels + k] += wgt * d_out.data[dst * d_out.channels + k];
        }
    });
    d_src
}

fn axis_taps(dst: usize, dst_len: usize, src_len: usize) -> [(usize, f64); 2] {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    let t = s - i0 as f64;
    [(i0, 1.0 - t), (i1, t)]
}

fn for_each_tap(src: &FeatureMap, height: usize, width: usize, mut f: impl FnMut(usize, usize, f64)) {
    for y in 0..height {
        let ty = axis_taps(y, height, src.height);
        for x in 0..width {
            let tx = axis_taps(x, width, src.width);
            for &(sy, wy) in &ty {
                for &(sx, wx) in &tx {
                    let w = wy * wx;
                    if w != 0.0 {
                        f(y * width + x, sy * src.width + sx, w);
                    }
                }
            }
        }
    }
}

/// Concatenation result with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Concatenated {
    pub map: FeatureMap,
    local_norms: Vec<f64>,
    global_norms: Vec<f64>,
    local_channels: usize,
    global_shape: (usize, usize),
}

fn normalize_block(v: &[f64]) -> (f64, impl Iterator<Item = f64> + '_) {
    let n = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
    (n, v.iter().map(move |x| x / n))
}

/// Resamples `global_` onto the grid of `local`, L2-normalizes each block per
/// pixel and stacks the channels, local first.
pub fn concat_local_global(local: &FeatureMap, global_: &FeatureMap) -> Result<Concatenated> {
    if local.num_pixels() == 0 || global_.num_pixels() == 0 {
        return Err(Error::shape("degenerate feature grid"));
    }
    let resampled = if global_.height == local.height && global_.width == local.width {
        global_.clone()
    } else {
        resample_bilinear(global_, local.height, local.width)?
    };
    let (cl, cg) = (local.channels, global_.channels);
    let mut map = FeatureMap::zeros(local.height, local.width, cl + cg, local.tag);
    let mut local_norms = Vec::with_capacity(local.num_pixels());
    let mut global_norms = Vec::with_capacity(local.num_pixels());
    for p in 0..local.num_pixels() {
        let out = map.pixel_mut(p);
        let (nl, it) = normalize_block(local.pixel(p));
        for (o, v) in out[..cl].iter_mut().zip(it) {
            *o = v;
        }
        let (ng, it) = normalize_block(resampled.pixel(p));
        for (o, v) in out[cl..].iter_mut().zip(it) {
            *o = v;
        }
        local_norms.push(nl);
        global_norms.push(ng);
    }
    Ok(Concatenated { map, local_norms, global_norms, local_channels: cl, global_shape: (global_.height, global_.width) })
}

impl Concatenated {
    /// Splits `∂L/∂concat` into gradients for the original local and global maps.
    pub fn backward(&self, d_out: &FeatureMap) -> (FeatureMap, FeatureMap) {
        let cl = self.local_channels;
        let cg = self.map.channels - cl;
        let (h, w) = (self.map.height, self.map.width);
        let mut d_local = FeatureMap::zeros(h, w, cl, self.map.tag);
        let mut d_global = FeatureMap::zeros(h, w, cg, self.map.tag);
        for p in 0..h * w {
            let y = self.map.pixel(p);
            let dy = d_out.pixel(p);
            // y = v / n  =>  dv = (dy - y (y·dy)) / n
            let block = |ys: &[f64], dys: &[f64], n: f64, dst: &mut [f64]| {
                let proj: f64 = ys.iter().zip(dys).map(|(a, b)| a * b).sum();
                for ((d, &yi), &dyi) in dst.iter_mut().zip(ys).zip(dys) {
                    *d = (dyi - yi * proj) / n;
                }
            };
            block(&y[..cl], &dy[..cl], self.local_norms[p], d_local.pixel_mut(p));
            block(&y[cl..], &dy[cl..], self.global_norms[p], d_global.pixel_mut(p));
        }
        let (gh, gw) = self.global_shape;
        if (gh, gw) != (h, w) {
            d_global = resample_bilinear_backward(&d_global, gh, gw);
        }
        (d_local, d_global)
    }
}
