//! Zero-shot video semantic segmentation from frozen diffusion features.
//!
//! The first frame's aggregated features are clustered with K-Means. A KNN
//! context model propagates those clusters to the following frames batch by
//! batch, refined by feature correspondence and a temporal vote. Each coarse
//! cluster mask is then lifted to full resolution by modulating a diffusion
//! rollout inside the mask and comparing the positively and negatively
//! modulated images.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrayio;
pub mod clustering;
pub mod context;
pub mod error;
pub mod external;
pub mod grid;
pub mod imageio;
pub mod manifest;
pub mod metrics;
pub mod modulate;
pub mod pipeline;
pub mod refine;
pub mod render;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{BinaryMask, CoarseMask, FeatureGrid, SegmentationMap, IGNORE};
pub use manifest::{load_manifest, VideoManifest};
pub use pipeline::{run_manifest, run_video, BackboneChoice, PipelineConfig, VideoResult};
pub use synth::{synth_generate, SynthSpec};
