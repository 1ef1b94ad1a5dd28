//! The ReMOVE score: cosine similarity between the mean patch embedding
//! inside the erase mask and the mean patch embedding outside it.
//!
//! The pipeline is
//! crop (optional) -> resize/normalize -> encode -> downsample mask ->
//! segregate patches -> mean features -> similarity.
//! Every stage except encoding is a pure function in this crate; the encoder
//! is any [`PatchEncoder`] backend. Higher scores mean the inpainted region is
//! more consistent with its surroundings.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::{self, PatchEncoder};
use crate::error::{Error, Result, Stage, StageExt};
use crate::preprocess::{self, CropBox};
use crate::raster::{EditedImage, EraseMask};

/// Binary grid at patch resolution, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Config(format!(
                "patch mask {rows}x{cols} has {} cells",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Per-patch feature vectors produced by an encoder backend.
///
/// Cells are stored row-major; cell `(row, col)` covers pixels
/// `[col*p, (col+1)*p) x [row*p, (row+1)*p)` of the encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    patch_size: usize,
    encoder_id: String,
    features: Vec<f64>,
}

impl PatchEmbeddingGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        patch_size: usize,
        encoder_id: impl Into<String>,
        features: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || rows == 0 || cols == 0 {
            return Err(Error::ContractViolation(format!(
                "embedding grid {rows}x{cols}x{dim} is empty"
            )));
        }
        if features.len() != rows * cols * dim {
            return Err(Error::ContractViolation(format!(
                "embedding grid {rows}x{cols}x{dim} holds {} values",
                features.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            patch_size,
            encoder_id: encoder_id.into(),
            features,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.features[start..start + self.dim]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }
}

/// Patch features split by the patch mask. Borrowed from the grid.
#[derive(Debug, Clone)]
pub struct FeaturePartition<'a> {
    pub masked: Vec<&'a [f64]>,
    pub unmasked: Vec<&'a [f64]>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[non_exhaustive]
pub enum SimilarityMeasure {
    #[default]
    Cosine,
}

impl SimilarityMeasure {
    pub fn apply(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            SimilarityMeasure::Cosine => cosine_similarity(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub use_crop: bool,
    /// Fraction of the crop area the mask should cover.
    pub target_mask_fraction: f64,
    /// Acceptable `(low, high)` range of the mask fraction inside the crop.
    pub mask_fraction_bounds: (f64, f64),
    /// A patch counts as masked when at least this fraction of its pixels is masked.
    pub patch_mask_threshold: f64,
    /// Side of the square encoder input, in pixels.
    pub input_side: usize,
    pub patch_size: usize,
    pub similarity: SimilarityMeasure,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            use_crop: true,
            target_mask_fraction: 0.4,
            mask_fraction_bounds: (0.30, 0.50),
            patch_mask_threshold: 0.5,
            input_side: 1024,
            patch_size: 16,
            similarity: SimilarityMeasure::Cosine,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.mask_fraction_bounds;
        let t = self.target_mask_fraction;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!(
                "target mask fraction {t} must lie in (0, 1)"
            )));
        }
        if !(lo <= t && t <= hi && lo > 0.0 && hi <= 1.0) {
            return Err(Error::Config(format!(
                "mask fraction bounds ({lo}, {hi}) must be ordered within (0, 1] and contain the target {t}"
            )));
        }
        if !(self.patch_mask_threshold > 0.0 && self.patch_mask_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "patch mask threshold {} must lie in (0, 1]",
                self.patch_mask_threshold
            )));
        }
        if self.patch_size == 0 || self.input_side == 0 || self.input_side % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "input side {} must be a positive multiple of patch size {}",
                self.input_side, self.patch_size
            )));
        }
        Ok(())
    }

    /// Short hex digest identifying this configuration together with an encoder.
    pub fn digest(&self, encoder_id: &str) -> String {
        let json = serde_json::to_string(&(self, encoder_id)).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub score: f64,
    pub masked_patch_count: usize,
    pub unmasked_patch_count: usize,
    /// Present iff the crop variant was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_box: Option<CropBox>,
    /// Mask coverage inside the crop; absent without crop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_mask_fraction: Option<f64>,
    pub encoder_id: String,
    pub config_digest: String,
}

pub fn segregate_features<'a>(
    grid: &'a PatchEmbeddingGrid,
    pmask: &PatchMask,
) -> Result<FeaturePartition<'a>> {
    if grid.rows() != pmask.rows() || grid.cols() != pmask.cols() {
        return Err(Error::Config(format!(
            "embedding grid is {}x{} but patch mask is {}x{}",
            grid.rows(),
            grid.cols(),
            pmask.rows(),
            pmask.cols()
        )));
    }
    let mut masked = Vec::new();
    let mut unmasked = Vec::new();
    for (cell, &bit) in grid.cells().zip(pmask.bits()) {
        if bit {
            masked.push(cell);
        } else {
            unmasked.push(cell);
        }
    }
    if unmasked.is_empty() {
        return Err(Error::DegenerateMask(
            "mask covers entire image at patch resolution".into(),
        ));
    }
    if masked.is_empty() {
        return Err(Error::DegenerateMask(
            "mask covers no patch at patch resolution".into(),
        ));
    }
    Ok(FeaturePartition { masked, unmasked })
}

fn mean_vector(set: &[&[f64]], which: &str) -> Result<Vec<f64>> {
    let first = set
        .first()
        .ok_or_else(|| Error::DegenerateMask(format!("{which} feature set is empty")))?;
    let mut acc = vec![0.0f64; first.len()];
    for v in set {
        if v.len() != acc.len() {
            return Err(Error::ContractViolation(format!(
                "feature dimensions differ: {} vs {}",
                v.len(),
                acc.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    let n = set.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Elementwise means of the masked and unmasked sets, in that order.
pub fn mean_features(partition: &FeaturePartition<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        mean_vector(&partition.masked, "masked")?,
        mean_vector(&partition.unmasked, "unmasked")?,
    ))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "cosine of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector(
            "mean embedding of a region is the zero vector".into(),
        ));
    }
    let s = dot / (na * nb).sqrt();
    if !s.is_finite() {
        return Err(Error::ZeroVector(format!("non-finite similarity {s}")));
    }
    Ok(s.clamp(-1.0, 1.0))
}

/// Scores one edited image against its erase mask.
pub fn remove_score(
    image: &EditedImage,
    mask: &EraseMask,
    encoder: &dyn PatchEncoder,
    config: &MetricConfig,
) -> Result<MetricResult> {
    config.validate()?;
    if mask.dimensions() != (image.width(), image.height()) {
        return Err(Error::Config(format!(
            "mask is {:?} but image `{}` is {:?}",
            mask.dimensions(),
            image.id(),
            (image.width(), image.height())
        )));
    }
    if encoder.input_side() != config.input_side || encoder.patch_size() != config.patch_size {
        return Err(Error::Config(format!(
            "encoder `{}` expects side {} / patch {}, config has side {} / patch {}",
            encoder.encoder_id(),
            encoder.input_side(),
            encoder.patch_size(),
            config.input_side,
            config.patch_size
        )));
    }

    let (cropped, crop_box, crop_mask_fraction) = if config.use_crop {
        let plan = preprocess::compute_crop(mask, config).stage(Stage::Crop)?;
        let (img, m) = preprocess::apply_crop(image, mask, plan.crop_box);
        (Some((img, m)), Some(plan.crop_box), Some(plan.mask_fraction))
    } else {
        (None, None, None)
    };
    let (image, mask) = match &cropped {
        Some((img, m)) => (img, m),
        None => (image, mask),
    };

    let pre = preprocess::resize_normalize(image, config, encoder.normalization_id())
        .stage(Stage::Preprocess)?;
    let grid = encoders::encode(encoder, &pre).stage(Stage::Encode)?;

    let resized_mask = preprocess::resize_mask_nearest(mask, config.input_side);
    let pmask = preprocess::downsample_mask(
        &resized_mask,
        config.patch_size,
        (grid.rows(), grid.cols()),
        config.patch_mask_threshold,
    )
    .stage(Stage::MaskDownsample)?;

    let partition = segregate_features(&grid, &pmask).stage(Stage::Segregate)?;
    let (masked_mean, unmasked_mean) = mean_features(&partition).stage(Stage::Mean)?;
    let score = config
        .similarity
        .apply(&masked_mean, &unmasked_mean)
        .stage(Stage::Similarity)?;

    Ok(MetricResult {
        score,
        masked_patch_count: partition.masked.len(),
        unmasked_patch_count: partition.unmasked.len(),
        crop_box,
        crop_mask_fraction,
        encoder_id: encoder.encoder_id().to_string(),
        config_digest: config.digest(encoder.encoder_id()),
    })
}
