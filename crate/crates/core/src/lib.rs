//! Adaptive-resolution volumes stored in an SR-octree, with hierarchical
//! downscaling and per-level 2x super resolution.

pub mod backend;
pub mod cli;
pub mod error;
pub mod hier_sr;
pub mod io;
pub mod metrics;
pub mod octree;
pub mod resample;
pub mod synthetic;
pub mod volume;

pub use error::{Error, Result};
pub use hier_sr::{blockwise_upscale, hierarchical_downscale, hierarchical_upscale};
pub use metrics::{psnr, ssim, MetricReport, SsimParams};
pub use octree::{build_sr_octree, BuildConfig, SrNode, SrOctree};
pub use resample::{Downscaler, Upscaler2x, UpscalerHierarchy};
pub use synthetic::{gen_synthetic, SyntheticKind};
pub use volume::{denormalize, normalize, Normalization, Region, ValueRange, Volume};
