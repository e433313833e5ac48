//! Pipeline dispatch and the raster-mask algebra behind edited-image
//! synthesis.

pub mod dispatch;
pub mod ops;
pub mod pipeline;

pub use dispatch::{describe, dispatch, dispatch_table, PipelineId};
pub use ops::{
    background_mask, crop_paste, dilate, feather, gaussian_kernel, merge, normalized_attention_difference,
    outpaint_mask, segment_foreground, AttentionDifference, BBox, Placement, RasterMask,
};
pub use pipeline::{synthesize, MaskParams, Synthesis};
