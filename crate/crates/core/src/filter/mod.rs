//! Data quality filtering: instruction and image pre-checks, then a
//! gauntlet of similarity metrics over each generated triplet.

pub mod gauntlet;
pub mod metrics;

pub use gauntlet::{
    pre_filter, prefilter_report, run_gauntlet, FilterReport, FilterSummary, FilterThresholds,
    GauntletProviders, ImageMeta, PreFilterStatus, PreFilterVerdict, Verdict,
};
pub use metrics::{
    clip_image_similarity, clip_text_alignment, cosine, directional_similarity, l1_distance,
    Similarity,
};
