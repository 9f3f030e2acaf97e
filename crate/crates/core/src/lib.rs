//! SAR despeckling and narrow-river extraction.
//!
//! Pipeline: speckled intensity -> log-domain U-Net denoiser -> dark-line
//! response -> least-cost centerline between control points -> binary CRF
//! segmentation around the centerline -> precision / recall / F-score.

pub mod centerline;
pub mod crf;
pub mod despeckle;
pub mod error;
pub mod io;
pub mod lines;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod speckle;

pub use centerline::{ControlPoints, Pixel, Polyline};
pub use crf::SegParams;
pub use despeckle::{DenoiserModel, LogDenoiser};
pub use error::{Error, Result};
pub use lines::{LineTemplate, ResponseMap};
pub use metrics::{Confusion, MetricsRow, Prf};
pub use raster::{Raster, RasterKind};
pub use speckle::SpeckleConfig;
