//! Client for external 2x upscaling models served over a framed binary
//! protocol, so trained networks plug into an [`UpscalerHierarchy`].
//!
//! [`UpscalerHierarchy`]: crate::resample::UpscalerHierarchy

mod client;
pub mod frame;
pub mod stub;

pub use client::{connect, connect_with, ClientOptions, EndpointSpec, ModelHandle, Transport};
pub use frame::{Frame, FrameKind, DEFAULT_PAYLOAD_CAP, FRAME_MAGIC};
