//! Style features, matching losses and class/style assignment.

mod concat;
mod feature_map;
mod hungarian;
mod multi;
mod nnfm;
mod toy;

pub use concat::{concat_local_global, resample_bilinear, resample_bilinear_backward, Concatenated};
pub use feature_map::{
    load_feature_map, read_feature_map, save_feature_map, write_feature_map, FeatureMap, SourceTag, FMAP_MAGIC,
    FMAP_VERSION,
};
pub use hungarian::{hungarian_assign, AssignmentMap, CostMatrix};
pub use multi::{ClassTerm, MultiStyleLoss, RenderedFeatures, StyleEngine, StyleEntry, StyleSet};
pub use nnfm::{content_loss, cosine_distance, nnfm_loss, nnfm_loss_masked, ContentLoss, NnfmLoss, COSINE_EPS};
pub use toy::{toy_feature_extract, LocalTape, ToyExtractor, ToyKind, GLOBAL_CHANNELS, LOCAL_CHANNELS};
