//! Depth-aware image stylization.
//!
//! The engine turns a content image and its depth map into a jet heatmap,
//! blends the heatmap into the content image, and then optimizes the pixels
//! of the blended image so that its convolutional features keep the content
//! while its Gram statistics match a style image.
//!
//! ```text
//! content.png ─┬───────────────────────────────┐
//! depth.png ── normalize ── colormap ── blend ──┴─ optimize(style.png) ── stylized.png
//! ```

pub mod config;
pub mod depth;
mod error;
pub mod features;
pub mod gradcheck;
pub mod heatmap;
pub mod image;
pub mod losses;
pub mod optimize;
pub mod pipeline;
mod png_io;
pub mod rng;
pub mod tensor;

pub use config::{ConfigOverrides, InitMode, JobConfig};
pub use depth::{
    cache_key, estimate_depth, load_depth, normalize_depth, save_depth, DepthBackend, DepthCache,
    DepthEstimator, DepthMap, ExternalEstimator, NormalizedDepth,
};
pub use error::{Error, Result};
pub use features::{Extractor, ExtractorSpec, FeatureSet, LayerGradients};
pub use heatmap::{apply_colormap, blend, colormap_lut, Colormap};
pub use image::{load_image, resize_bilinear, save_image, ImageRGB};
pub use losses::{
    content_loss, gram, style_loss, total_loss, tv_loss, GramMatrix, LossReport, LossWeights,
    Targets,
};
pub use optimize::{adam_step, run, AdamConfig, AdamState, RunSettings, RunTrace};
pub use rng::XorShift64Star;
pub use tensor::Tensor3;
