//! Top-K sparsification.

mod cache;
mod select;
mod topk;

pub use cache::{activation_threshold, weight_thresholds, CacheEntry, ThresholdCache};
pub use select::kth_magnitude;
pub use topk::{
    channel_l1_norms, channel_threshold_apply, channel_topk, keep_count, random_mask, random_mask_masked,
    sparsification_angle, threshold_apply_grouped, topk_exact, topk_exact_masked, topk_threshold_apply,
    SparsifyReport, Sparsified, TopKScope,
};
pub(crate) use topk::channel_topk_masked;
