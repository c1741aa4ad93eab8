use super::LossGrad;
use crate::error::{Error, Result};
use crate::math::{sigmoid, sigmoid_grad};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskThresholds {
    /// Keep threshold on `sigmoid(mask_logit)`.
    pub eps0: f64,
    /// Keep threshold on the largest class probability.
    pub eps1: f64,
}

impl Default for MaskThresholds {
    fn default() -> Self {
        Self { eps0: 0.01, eps1: 0.9 }
    }
}

impl MaskThresholds {
    pub fn new(eps0: f64, eps1: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < 1.0) || !(eps1 > 0.0 && eps1 < 1.0) {
            return Err(Error::invalid(format!("mask thresholds must lie in (0, 1), got {eps0}, {eps1}")));
        }
        Ok(Self { eps0, eps1 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskConfig {
    pub thresholds: MaskThresholds,
    pub prune_iterations: Vec<usize>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { thresholds: MaskThresholds::default(), prune_iterations: vec![1000, 2000] }
    }
}

/// Forward value and straight-through derivative of the binary mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMask {
    /// `1.0` when the Gaussian is kept, `0.0` otherwise.
    pub value: f64,
    /// `∂m_b/∂m`, always `sigmoid'(m)`.
    pub grad: f64,
}

impl BinaryMask {
    pub fn keep(&self) -> bool {
        self.value == 1.0
    }
}

/// `m_b = sg[v_b - σ(m)] + σ(m)` with `v_b = [σ(m) > ε₀] ∨ [max p > ε₁]`.
///
/// The forward value equals `v_b` exactly; the backward pass sees `σ(m)`.
pub fn binary_mask(mask_logit: f64, class_probs: &[f64], th: &MaskThresholds) -> BinaryMask {
    let s = sigmoid(mask_logit);
    let confident = class_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max) > th.eps1;
    let keep = s > th.eps0 || confident;
    BinaryMask { value: if keep { 1.0 } else { 0.0 }, grad: sigmoid_grad(mask_logit) }
}

/// `Σ σ(m)` over all mask logits.
pub fn mask_loss(mask_logits: &[f64]) -> LossGrad {
    LossGrad {
        value: mask_logits.iter().map(|&m| sigmoid(m)).sum(),
        grad: mask_logits.iter().map(|&m| sigmoid_grad(m)).collect(),
    }
}

/// Removes every Gaussian whose binary mask is zero, preserving the order of
/// the survivors. Returns the original indices of the survivors.
pub fn prune(scene: &mut Scene, th: &MaskThresholds) -> Result<Vec<usize>> {
    let kept: Vec<usize> = (0..scene.len())
        .filter(|&i| binary_mask(scene.gaussians[i].mask_logit, &scene.class_probabilities(i), th).keep())
        .collect();
    if kept.is_empty() && !scene.is_empty() {
        return Err(Error::Degenerate("pruning would remove every Gaussian".into()));
    }
    if kept.len() < scene.len() {
        let mut keep_flags = vec![false; scene.len()];
        for &i in &kept {
            keep_flags[i] = true;
        }
        let mut flags = keep_flags.into_iter();
        scene.gaussians.retain(|_| flags.next().unwrap_or(false));
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sigmoid;
    use crate::scene::{ClassHead, Gaussian};

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn confident_mask_passes_regardless_of_classes() {
        let th = MaskThresholds::default();
        let m = binary_mask(logit(0.9), &[0.3, 0.3, 0.4], &th);
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn semantic_rescue() {
        let th = MaskThresholds::default();
        let m = binary_mask(logit(0.001), &[0.95, 0.05], &th);
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn rejected_mask_keeps_straight_through_gradient() {
        let th = MaskThresholds::default();
        let l = logit(0.001);
        let m = binary_mask(l, &[0.2, 0.4, 0.4], &th);
        assert_eq!(m.value, 0.0);
        let s = sigmoid(l);
        assert!((m.grad - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn thresholds_validate_range() {
        assert!(MaskThresholds::new(0.0, 0.5).is_err());
        assert!(MaskThresholds::new(0.5, 1.0).is_err());
        assert!(MaskThresholds::new(0.01, 0.9).is_ok());
    }

    #[test]
    fn mask_loss_values() {
        assert!((mask_loss(&[0.0; 10]).value - 5.0).abs() < 1e-15);
        assert!(mask_loss(&[-800.0; 4]).value < 1e-300);
    }

    proptest::proptest! {
        #[test]
        fn forward_is_binary_and_monotone(
            m in -10.0f64..10.0, dm in 0.0f64..5.0, pmax in 0.34f64..1.0, dp in 0.0f64..0.3,
        ) {
            let th = MaskThresholds::default();
            let probs = |p: f64| vec![p.min(1.0), (1.0 - p.min(1.0)) / 2.0, (1.0 - p.min(1.0)) / 2.0];
            let a = binary_mask(m, &probs(pmax), &th);
            let b = binary_mask(m + dm, &probs(pmax), &th);
            let c = binary_mask(m, &probs(pmax + dp), &th);
            proptest::prop_assert!(a.value == 0.0 || a.value == 1.0);
            proptest::prop_assert!(b.value >= a.value);
            proptest::prop_assert!(c.value >= a.value);
        }
    }

    fn gaussian(mask_logit: f64, feature: Vec<f64>) -> Gaussian {
        Gaussian {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            color: [0.5; 3],
            sem_feature: feature,
            mask_logit,
        }
    }

    fn identity_head() -> ClassHead {
        ClassHead::new(2, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn prune_keeps_everything_when_all_pass() {
        let gs = vec![gaussian(3.0, vec![0.0, 0.0]), gaussian(-20.0, vec![10.0, 0.0])];
        let mut scene = Scene::new(gs, identity_head(), [0.0; 3]).unwrap();
        let before = scene.clone();
        assert_eq!(prune(&mut scene, &MaskThresholds::default()).unwrap(), vec![0, 1]);
        assert_eq!(scene, before);
    }

    #[test]
    fn prune_removes_only_failing_gaussian() {
        let gs = vec![
            gaussian(3.0, vec![0.0, 0.0]),
            gaussian(-20.0, vec![0.1, 0.0]),
            gaussian(-20.0, vec![0.0, 10.0]),
        ];
        let mut scene = Scene::new(gs.clone(), identity_head(), [0.0; 3]).unwrap();
        let classes_before = [scene.class_of(0), scene.class_of(2)];
        assert_eq!(prune(&mut scene, &MaskThresholds::default()).unwrap(), vec![0, 2]);
        assert_eq!(scene.gaussians, vec![gs[0].clone(), gs[2].clone()]);
        assert_eq!([scene.class_of(0), scene.class_of(1)], classes_before);
    }

    #[test]
    fn pruning_everything_is_an_error() {
        let gs = vec![gaussian(-20.0, vec![0.0, 0.0])];
        let mut scene = Scene::new(gs, identity_head(), [0.0; 3]).unwrap();
        assert!(matches!(prune(&mut scene, &MaskThresholds::default()), Err(Error::Degenerate(_))));
        assert_eq!(scene.len(), 1);
    }
}
