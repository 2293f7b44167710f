//! Reference implementations of the constituent attention mechanisms:
//! softmax multi-head attention, low-rank (Linformer-style) attention and
//! kernelized attention with a pluggable feature map.
//!
//! Multi-head attention here is the horizontal concatenation of heads; there
//! is no output projection. All variants scale the query projection by
//! `1/sqrt(d_head)` before scores or feature maps are formed.

mod config;
mod feature;
mod mechanisms;

pub use config::{
    sample_inputs, sample_params, AttentionConfig, HeadWeights, LowRankProjections, ModelKind, ModelParams,
    ProjectionMode,
};
pub(crate) use feature::flush_subnormal;
pub use feature::{apply_feature_map, FeatureMap, FeatureMapSpec, KernelKind, PRF_EXPONENT_LIMIT};
pub use mechanisms::{
    full_attention, kernel_attention, linformer_attention, AttentionOutput, DENOMINATOR_FLOOR,
};

pub(crate) use mechanisms::{
    check_inputs, check_map, check_projections, kernel_head, project_heads, project_query,
};
