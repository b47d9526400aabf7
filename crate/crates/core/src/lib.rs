//! Perception quality index (PQI) for camera frames.
//!
//! A frame's PQI combines its fine-grained center-surround saliency with
//! the saliency inside the boxes an object detector reported, weighted by
//! detection confidence. The crate also carries the machinery used to study
//! the index: artifact generators and sweeps, SLIC superpixel descriptors,
//! and the PLCC/SRCC/R² metrics used to score PQI regressors.

pub mod augment;
pub mod detection;
pub mod image;
pub mod integral;
pub mod metrics;
pub mod pqi;
pub mod saliency;
pub mod superpixel;
pub mod synth;

use thiserror::Error;

pub use crate::image::{to_grayscale, GrayImage, RealImage, Rect, RgbImage};
pub use crate::integral::IntegralImage;
pub use crate::pqi::{compute_pqi, PqiScore};
pub use crate::saliency::{fine_grained_saliency, SaliencyMap, SaliencyParams};

#[derive(Debug, Error)]
pub enum Error {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("buffer length {actual} does not match expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{0} (only 8-bit images are supported)")]
    UnsupportedDepth(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("cannot encode {path}: {reason}")]
    Encode { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid raw saliency map: {0}")]
    BadRawMap(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("correlation undefined for zero-variance series")]
    UndefinedCorrelation,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Grayscale, saliency and PQI for one frame in a single call.
pub fn score_frame(
    img: &RgbImage,
    detections: &detection::DetectionSet,
    params: &SaliencyParams,
) -> Result<(SaliencyMap, PqiScore)> {
    let sm = fine_grained_saliency(&to_grayscale(img), params)?;
    let score = compute_pqi(&sm, detections)?;
    Ok((sm, score))
}
