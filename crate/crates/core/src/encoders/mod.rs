//! Patch encoder backends.
//!
//! A backend maps a square, normalized image to one feature vector per
//! `p x p` patch. [`encode`] wraps every backend call with the shape,
//! normalization and finiteness checks of the contract, so implementations
//! only produce the grid.

mod external;
mod mock;

use std::collections::BTreeMap;
use std::path::PathBuf;

pub use external::{scripts_dir, ExternalVitEncoder};
pub use mock::MockPoolingEncoder;

use crate::error::{Error, Result};
use crate::metric::PatchEmbeddingGrid;
use crate::preprocess::PreprocessedImage;

/// Implementations must be safe to call from several threads at once.
pub trait PatchEncoder: Send + Sync {
    fn encoder_id(&self) -> &str;
    fn patch_size(&self) -> usize;
    fn input_side(&self) -> usize;
    fn normalization_id(&self) -> &str;
    /// Embedding size when known without running inference.
    fn embedding_dim(&self) -> Option<usize>;
    /// Produces the raw grid; callers go through [`encode`].
    fn extract(&self, image: &PreprocessedImage) -> Result<PatchEmbeddingGrid>;
}

pub fn grid_side(encoder: &dyn PatchEncoder) -> usize {
    encoder.input_side() / encoder.patch_size()
}

pub fn encode(encoder: &dyn PatchEncoder, image: &PreprocessedImage) -> Result<PatchEmbeddingGrid> {
    if image.side() != encoder.input_side() {
        return Err(Error::Config(format!(
            "encoder `{}` takes {}px input, got {}px",
            encoder.encoder_id(),
            encoder.input_side(),
            image.side()
        )));
    }
    if image.normalization_id() != encoder.normalization_id() {
        return Err(Error::Config(format!(
            "encoder `{}` expects `{}` normalization, input has `{}`",
            encoder.encoder_id(),
            encoder.normalization_id(),
            image.normalization_id()
        )));
    }
    let grid = encoder.extract(image)?;
    let side = grid_side(encoder);
    if grid.rows() != side || grid.cols() != side {
        return Err(Error::ContractViolation(format!(
            "encoder `{}` returned a {}x{} grid, expected {side}x{side}",
            encoder.encoder_id(),
            grid.rows(),
            grid.cols()
        )));
    }
    if let Some(dim) = encoder.embedding_dim() {
        if grid.dim() != dim {
            return Err(Error::ContractViolation(format!(
                "encoder `{}` declared d_f = {dim}, returned {}",
                encoder.encoder_id(),
                grid.dim()
            )));
        }
    }
    if let Some(bad) = grid.features().iter().position(|v| !v.is_finite()) {
        return Err(Error::ContractViolation(format!(
            "encoder `{}` produced a non-finite feature at flat index {bad}",
            encoder.encoder_id()
        )));
    }
    Ok(grid)
}

/// Construction options shared by all backends. Backends ignore what they do not use.
#[derive(Debug, Clone)]
pub struct EncoderOptions {
    pub input_side: usize,
    pub patch_size: usize,
    pub weights: Option<PathBuf>,
    /// Command line of the inference process for external backends.
    pub command: Option<String>,
    pub device: String,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        Self {
            input_side: 1024,
            patch_size: 16,
            weights: None,
            command: None,
            device: "cpu".into(),
        }
    }
}

type Factory = Box<dyn Fn(&str, &EncoderOptions) -> Result<Box<dyn PatchEncoder>> + Send + Sync>;

/// Backends keyed by encoder id.
pub struct EncoderRegistry {
    factories: BTreeMap<String, Factory>,
}

pub const MOCK_ENCODER: &str = "mock-pool";
pub const SAM_VARIANTS: [&str; 3] = ["sam-vit-h", "sam-vit-l", "sam-vit-b"];
/// Default external backend: the largest SAM image encoder.
pub const DEFAULT_ENCODER: &str = "sam-vit-h";

impl EncoderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(MOCK_ENCODER, |_, opts| {
            Ok(Box::new(MockPoolingEncoder::new(opts.input_side, opts.patch_size)))
        });
        for variant in SAM_VARIANTS {
            reg.register(variant, |id, opts| {
                Ok(Box::new(ExternalVitEncoder::load(id, opts)?))
            });
        }
        reg
    }

    pub fn register(
        &mut self,
        id: &str,
        factory: impl Fn(&str, &EncoderOptions) -> Result<Box<dyn PatchEncoder>> + Send + Sync + 'static,
    ) {
        self.factories.insert(id.to_string(), Box::new(factory));
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, id: &str, opts: &EncoderOptions) -> Result<Box<dyn PatchEncoder>> {
        let factory = self.factories.get(id).ok_or_else(|| {
            Error::Config(format!(
                "unknown encoder `{id}`; registered: {}",
                self.ids().collect::<Vec<_>>().join(", ")
            ))
        })?;
        if opts.patch_size == 0 || opts.input_side % opts.patch_size != 0 {
            return Err(Error::Config(format!(
                "input side {} is not a multiple of patch size {}",
                opts.input_side, opts.patch_size
            )));
        }
        factory(id, opts)
    }
}
