//! Reconstruction-stage semantic regularizers and the semantic importance mask.

mod labels;
mod losses;
mod mask;

pub use labels::{load_label_map, read_label_map, save_label_map, write_label_map, LabelMap, LMAP_MAGIC, LMAP_VERSION};
pub use losses::{
    entropy_of_logits, knn_smoothness_loss, negative_entropy_loss, segmentation_loss, HeadLoss, KnnGraph,
};
pub use mask::{binary_mask, mask_loss, prune, BinaryMask, MaskConfig, MaskThresholds};

/// A scalar loss with its gradient with respect to a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}
