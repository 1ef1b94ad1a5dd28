//! ReMOVE: a reference-free score for object erasure.
//!
//! Given an inpainted image and the mask of the erased region, the score is
//! the cosine similarity between the mean patch embedding inside the mask and
//! the mean patch embedding outside it, computed on a square crop around the
//! mask. A value near 1 means the filled region looks like its surroundings.
//!
//! Besides the metric ([`metric`], [`preprocess`], [`encoders`]) the crate
//! carries the evaluation harness: reference-based baselines behind adapter
//! contracts ([`baselines`]), manifest ingestion and a synthetic degradation
//! corpus ([`datasets`]), and binned-correlation analysis ([`analysis`]).

pub mod analysis;
pub mod backend;
pub mod baselines;
pub mod datasets;
pub mod encoders;
pub mod error;
pub mod metric;
pub mod plot;
pub mod preprocess;
pub mod raster;

pub use encoders::{EncoderOptions, EncoderRegistry, MockPoolingEncoder, PatchEncoder};
pub use error::{Error, Result, Stage};
pub use metric::{remove_score, MetricConfig, MetricResult, PatchEmbeddingGrid, PatchMask};
pub use preprocess::CropBox;
pub use raster::{EditedImage, EraseMask, RgbRaster};
