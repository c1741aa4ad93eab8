use super::{LabelMap, LossGrad};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax_into};
use crate::raster::Image;
use crate::scene::{knn_neighbors, ClassHead};

/// A loss that depends on both per-item features and the class head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub value: f64,
    /// Gradient with respect to the features, flat and row-major.
    pub d_features: Vec<f64>,
    pub d_head: Vec<f64>,
}

/// Mean cross-entropy between the decoded rendered features and the label map,
/// over valid pixels. With no valid pixel the loss is zero.
pub fn segmentation_loss(feature_image: &Image, labels: &LabelMap, head: &ClassHead) -> Result<HeadLoss> {
    let (w, h) = (feature_image.width, feature_image.height);
    if labels.width != w || labels.height != h {
        return Err(Error::shape(format!(
            "label map {}x{} does not match feature image {w}x{h}",
            labels.width, labels.height
        )));
    }
    if feature_image.channels != head.feature_dim() {
        return Err(Error::shape("feature image width does not match class head"));
    }
    let c = head.num_classes();
    let d = head.feature_dim();
    let mut out = HeadLoss { value: 0.0, d_features: vec![0.0; w * h * d], d_head: vec![0.0; head.num_params()] };
    let valid = labels.num_valid();
    if valid == 0 {
        return Ok(out);
    }
    let inv = 1.0 / valid as f64;
    let mut logits = vec![0.0; c];
    let mut probs = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let Some(label) = labels.get(x, y) else { continue };
            if label >= c {
                return Err(Error::invalid(format!("label {label} out of range for {c} classes")));
            }
            let e = feature_image.pixel(x, y);
            head.logits_into(e, &mut logits);
            out.value += (log_sum_exp(&logits) - logits[label]) * inv;
            softmax_into(&logits, &mut probs);
            probs[label] -= 1.0;
            probs.iter_mut().for_each(|g| *g *= inv);
            let p = y * w + x;
            head.backward(e, &probs, &mut out.d_head, Some(&mut out.d_features[p * d..(p + 1) * d]));
        }
    }
    Ok(out)
}

/// Frozen neighbour graph with distance weights `exp(-|μ_i - μ_j| / σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl KnnGraph {
    pub fn from_neighbors(positions: &[[f64; 3]], neighbors: Vec<Vec<usize>>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if neighbors.len() != positions.len() {
            return Err(Error::shape("one neighbour list per point required"));
        }
        let weights = neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .map(|&j| {
                        let (a, b) = (positions[i], positions[j]);
                        let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                        (-dist / sigma).exp()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { neighbors, weights })
    }

    pub fn build(positions: &[[f64; 3]], k: usize, sigma: f64) -> Result<Self> {
        Self::from_neighbors(positions, knn_neighbors(positions, k)?, sigma)
    }

    /// `Σ_i Σ_{j ∈ N_i} w_ij |e_i - e_j|²` over flat `N x dim` features.
    pub fn loss(&self, features: &[f64], dim: usize) -> LossGrad {
        let mut out = LossGrad { value: 0.0, grad: vec![0.0; features.len()] };
        for (i, (list, ws)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            for (&j, &w) in list.iter().zip(ws) {
                for k in 0..dim {
                    let diff = features[i * dim + k] - features[j * dim + k];
                    out.value += w * diff * diff;
                    out.grad[i * dim + k] += 2.0 * w * diff;
                    out.grad[j * dim + k] -= 2.0 * w * diff;
                }
            }
        }
        out
    }
}

/// Distance-weighted smoothness of semantic features over a neighbour graph.
/// Positions are frozen, so only the features receive gradients.
pub fn knn_smoothness_loss(
    features: &[f64],
    dim: usize,
    positions: &[[f64; 3]],
    neighbors: &[Vec<usize>],
    sigma: f64,
) -> Result<LossGrad> {
    if features.len() != positions.len() * dim {
        return Err(Error::shape("features must be N x dim"));
    }
    Ok(KnnGraph::from_neighbors(positions, neighbors.to_vec(), sigma)?.loss(features, dim))
}

/// Shannon entropy of `softmax(logits)` and its gradient with respect to the logits.
pub fn entropy_of_logits(logits: &[f64]) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let log_p: Vec<f64> = logits.iter().map(|&z| z - lse).collect();
    let h: f64 = -log_p.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
    let grad = log_p.iter().map(|&lp| -lp.exp() * (lp + h)).collect();
    (h, grad)
}

/// `Σ_i H(softmax(head(e_i)))`.
///
/// Despite the customary "negative entropy" name this is the (non-negative)
/// entropy; minimizing it pushes each Gaussian towards a single class.
pub fn negative_entropy_loss(features: &[f64], head: &ClassHead) -> Result<HeadLoss> {
    let d = head.feature_dim();
    if d == 0 && !features.is_empty() || d > 0 && features.len() % d != 0 {
        return Err(Error::shape("features must be N x D_e"));
    }
    let n = if d == 0 { 0 } else { features.len() / d };
    let mut out = HeadLoss { value: 0.0, d_features: vec![0.0; features.len()], d_head: vec![0.0; head.num_params()] };
    let mut logits = vec![0.0; head.num_classes()];
    for i in 0..n {
        let e = &features[i * d..(i + 1) * d];
        head.logits_into(e, &mut logits);
        let (h, g) = entropy_of_logits(&logits);
        out.value += h;
        head.backward(e, &g, &mut out.d_head, Some(&mut out.d_features[i * d..(i + 1) * d]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let v = x[i];
                x[i] = v + h;
                let a = f(&x);
                x[i] = v - h;
                let b = f(&x);
                x[i] = v;
                (a - b) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        let scale = a.iter().chain(b).fold(1e-3f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn uniform_decoder_gives_log_c() {
        let head = ClassHead::zeros(5, 3);
        let fi = Image::filled(3, 2, &[0.3, -1.0, 2.0]);
        let labels = LabelMap::from_labels(3, 2, vec![0, 1, 2, 3, 4, LabelMap::INVALID]).unwrap();
        let l = segmentation_loss(&fi, &labels, &head).unwrap();
        assert!((l.value - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let t = 40.0;
        let head = ClassHead::new(3, 1, vec![t, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let fi = Image::filled(2, 2, &[1.0]);
        let labels = LabelMap::from_labels(2, 2, vec![0; 4]).unwrap();
        assert!(segmentation_loss(&fi, &labels, &head).unwrap().value < 1e-15);
    }

    #[test]
    fn no_valid_pixels_gives_zero() {
        let head = ClassHead::zeros(2, 2);
        let fi = Image::filled(2, 2, &[1.0, 2.0]);
        let l = segmentation_loss(&fi, &LabelMap::invalid(2, 2), &head).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.d_features.iter().chain(&l.d_head).all(|&g| g == 0.0));
    }

    #[test]
    fn segmentation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h, d, c) = (3, 3, 4, 3);
        let fi = Image::from_data(w, h, d, (0..w * h * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<u16> = (0..w * h).map(|i| if i == 4 { LabelMap::INVALID } else { (i % c) as u16 }).collect();
        let labels = LabelMap::from_labels(w, h, labels).unwrap();
        let head = ClassHead::new(c, d, (0..c * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let l = segmentation_loss(&fi, &labels, &head).unwrap();
        let fd_feat = central_diff(
            &|x| segmentation_loss(&Image::from_data(w, h, d, x.to_vec()).unwrap(), &labels, &head).unwrap().value,
            &fi.data,
        );
        assert_close(&l.d_features, &fd_feat, 1e-7);
        let fd_head = central_diff(
            &|x| segmentation_loss(&fi, &labels, &ClassHead::new(c, d, x.to_vec()).unwrap()).unwrap().value,
            head.weights(),
        );
        assert_close(&l.d_head, &fd_head, 1e-7);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let head = ClassHead::zeros(2, 1);
        let fi = Image::filled(1, 1, &[1.0]);
        let labels = LabelMap::from_labels(1, 1, vec![2]).unwrap();
        assert!(segmentation_loss(&fi, &labels, &head).is_err());
    }

    #[test]
    fn knn_identical_features_is_zero() {
        let pos = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let nb = knn_neighbors(&pos, 2).unwrap();
        let f = [0.5, -1.0, 0.5, -1.0, 0.5, -1.0];
        assert_eq!(knn_smoothness_loss(&f, 2, &pos, &nb, 0.3).unwrap().value, 0.0);
    }

    #[test]
    fn knn_two_points_counts_each_direction() {
        let d = 1.5;
        let sigma = 0.7;
        let pos = [[0.0; 3], [d, 0.0, 0.0]];
        let nb = knn_neighbors(&pos, 1).unwrap();
        let f = [1.0, 2.0, -0.5, 0.0];
        let delta2 = 1.5f64.powi(2) + 2.0f64.powi(2);
        let want = 2.0 * delta2 * (-d / sigma).exp();
        assert!((knn_smoothness_loss(&f, 2, &pos, &nb, sigma).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn knn_rejects_bad_sigma() {
        let pos = [[0.0; 3], [1.0, 0.0, 0.0]];
        let nb = knn_neighbors(&pos, 1).unwrap();
        assert!(knn_smoothness_loss(&[0.0, 0.0], 1, &pos, &nb, 0.0).is_err());
    }

    #[test]
    fn knn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pos: Vec<[f64; 3]> = (0..12).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let nb = knn_neighbors(&pos, 3).unwrap();
        let f: Vec<f64> = (0..12 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = knn_smoothness_loss(&f, 3, &pos, &nb, 0.5).unwrap();
        let fd = central_diff(&|x| knn_smoothness_loss(x, 3, &pos, &nb, 0.5).unwrap().value, &f);
        assert_close(&l.grad, &fd, 1e-7);
    }

    /// Two disconnected cliques: zero when each component is constant, positive otherwise.
    #[test]
    fn knn_zero_iff_constant_per_component() {
        let pos = [[0.0; 3], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [5.0, 0.0, 0.0], [5.1, 0.0, 0.0], [5.0, 0.1, 0.0]];
        let nb = knn_neighbors(&pos, 2).unwrap();
        let piecewise = [1.0, 1.0, 1.0, -3.0, -3.0, -3.0];
        assert_eq!(knn_smoothness_loss(&piecewise, 1, &pos, &nb, 1.0).unwrap().value, 0.0);
        let mut broken = piecewise;
        broken[4] = -2.9;
        assert!(knn_smoothness_loss(&broken, 1, &pos, &nb, 1.0).unwrap().value > 0.0);
    }

    #[test]
    fn entropy_uniform_and_one_hot() {
        let (h, _) = entropy_of_logits(&[0.0; 4]);
        assert!((h - 4f64.ln()).abs() < 1e-12);
        assert!((h - 1.386294).abs() < 1e-6);
        let (h, _) = entropy_of_logits(&[60.0, 0.0, 0.0, 0.0]);
        assert!(h < 1e-20);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (d, c, n) = (3, 4, 5);
        let head = ClassHead::new(c, d, (0..c * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = negative_entropy_loss(&f, &head).unwrap();
        let fd = central_diff(&|x| negative_entropy_loss(x, &head).unwrap().value, &f);
        assert_close(&l.d_features, &fd, 1e-7);
        let fd_head = central_diff(
            &|x| negative_entropy_loss(&f, &ClassHead::new(c, d, x.to_vec()).unwrap()).unwrap().value,
            head.weights(),
        );
        assert_close(&l.d_head, &fd_head, 1e-7);
    }

    proptest::proptest! {
        #[test]
        fn entropy_bounded_and_shift_invariant(
            z in proptest::collection::vec(-20.0f64..20.0, 1..8), shift in -50.0f64..50.0,
        ) {
            let c = z.len() as f64;
            let (h, _) = entropy_of_logits(&z);
            proptest::prop_assert!(h >= -1e-12 && h <= c.ln() + 1e-12);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let (hs, _) = entropy_of_logits(&shifted);
            proptest::prop_assert!((h - hs).abs() < 1e-9);
        }

        #[test]
        fn knn_loss_non_negative(
            f in proptest::collection::vec(-5.0f64..5.0, 16), seed in 0u64..100,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos: Vec<[f64; 3]> = (0..8).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
            let nb = knn_neighbors(&pos, 3).unwrap();
            proptest::prop_assert!(knn_smoothness_loss(&f, 2, &pos, &nb, 0.2).unwrap().value >= 0.0);
        }
    }
}
