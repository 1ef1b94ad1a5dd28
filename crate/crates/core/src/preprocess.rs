//! Geometric and photometric preparation of a sample before encoding.
//!
//! The crop is a square around the mask's bounding box sized so the mask
//! covers roughly `target_mask_fraction` of it. Small masks otherwise
//! contribute only a handful of patches against thousands of background
//! patches. Images are resized bilinearly (half-pixel centers, edge clamp),
//! masks by nearest neighbour, both anisotropically to the square encoder input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{MetricConfig, PatchMask};
use crate::raster::{EditedImage, EraseMask};

/// Square crop in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropPlan {
    pub crop_box: CropBox,
    /// Masked pixels inside the box divided by the box area.
    pub mask_fraction: f64,
    /// False when no square inside the image reaches the configured fraction band.
    pub within_bounds: bool,
}

impl CropPlan {
    pub fn out_of_bounds_fraction(&self) -> bool {
        !self.within_bounds
    }
}

fn place(lo_edge: usize, hi_edge: usize, side: usize, extent: usize) -> usize {
    // twice the bbox center, to stay in integers
    let center2 = (lo_edge + hi_edge + 1) as i64;
    let start = (center2 - side as i64).div_euclid(2);
    let max_start = (extent - side) as i64;
    let contain_lo = (hi_edge as i64 + 1 - side as i64).max(0);
    let contain_hi = (lo_edge as i64).min(max_start);
    let start = if contain_lo <= contain_hi {
        start.clamp(contain_lo, contain_hi)
    } else {
        start.clamp(0, max_start)
    };
    start as usize
}

pub fn compute_crop(mask: &EraseMask, config: &MetricConfig) -> Result<CropPlan> {
    let (x_min, y_min, x_max, y_max) = mask
        .bounding_box()
        .ok_or_else(|| Error::DegenerateMask("mask is empty; nothing to crop around".into()))?;
    let (w, h) = mask.dimensions();
    let area = mask.area() as f64;
    let (lo, hi) = config.mask_fraction_bounds;
    let in_band = |side: usize| {
        let f = area / (side * side) as f64;
        f >= lo && f <= hi
    };

    let limit = w.min(h);
    let needed = (x_max - x_min + 1).max(y_max - y_min + 1);
    let ideal = (area / config.target_mask_fraction).sqrt();
    let mut side = (ideal.ceil() as usize).max(needed).min(limit);

    if needed <= limit && !in_band(side) {
        // Rounding the ideal side up can leave the band for tiny masks; take the
        // in-band side closest to the ideal when one exists.
        let lo_side = ((area / hi).sqrt().floor() as usize).max(needed).max(1);
        let hi_side = ((area / lo).sqrt().ceil() as usize).min(limit);
        if let Some(best) = (lo_side..=hi_side)
            .filter(|&s| in_band(s))
            .min_by(|&a, &b| {
                (a as f64 - ideal)
                    .abs()
                    .total_cmp(&(b as f64 - ideal).abs())
                    .then(a.cmp(&b))
            })
        {
            side = best;
        }
    }

    let crop_box = CropBox {
        x0: place(x_min, x_max, side, w),
        y0: place(y_min, y_max, side, h),
        side,
    };
    let mut inside = 0usize;
    for y in crop_box.y0..crop_box.y0 + side {
        for x in crop_box.x0..crop_box.x0 + side {
            inside += usize::from(mask.get(x, y));
        }
    }
    let mask_fraction = inside as f64 / (side * side) as f64;
    Ok(CropPlan {
        crop_box,
        mask_fraction,
        within_bounds: mask_fraction >= lo && mask_fraction <= hi,
    })
}

pub fn apply_crop(image: &EditedImage, mask: &EraseMask, b: CropBox) -> (EditedImage, EraseMask) {
    let pixels = image.pixels().crop(b.x0, b.y0, b.side, b.side);
    let mut cropped = EditedImage::new(image.id(), pixels);
    if let Some(gt) = image.ground_truth() {
        cropped = cropped
            .with_ground_truth(gt.crop(b.x0, b.y0, b.side, b.side))
            .expect("identical crop keeps dimensions equal");
    }
    (cropped, mask.crop(b.x0, b.y0, b.side, b.side))
}

/// Channelwise normalization an encoder expects its input in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Values left in `[0, 1]`.
    Identity,
    /// `(x - mean) / std` with the ImageNet statistics used by SAM-style ViTs.
    ImageNet,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

impl Normalization {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "identity" => Ok(Normalization::Identity),
            "imagenet" => Ok(Normalization::ImageNet),
            "" => Err(Error::Config("encoder declares no normalization".into())),
            other => Err(Error::Config(format!("unknown normalization `{other}`"))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Normalization::Identity => "identity",
            Normalization::ImageNet => "imagenet",
        }
    }

    fn apply(self, channel: usize, v: f64) -> f64 {
        match self {
            Normalization::Identity => v,
            Normalization::ImageNet => (v - IMAGENET_MEAN[channel]) / IMAGENET_STD[channel],
        }
    }
}

/// Square, normalized encoder input, interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    side: usize,
    data: Vec<f64>,
    normalization: Normalization,
}

impl PreprocessedImage {
    pub fn new(side: usize, data: Vec<f64>, normalization: Normalization) -> Result<Self> {
        if side == 0 || data.len() != side * side * 3 {
            return Err(Error::Config(format!(
                "preprocessed image of side {side} holds {} values",
                data.len()
            )));
        }
        Ok(Self {
            side,
            data,
            normalization,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn normalization_id(&self) -> &'static str {
        self.normalization.id()
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.side + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Source index pair and weight of the second one, per output coordinate.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_normalize(
    image: &EditedImage,
    config: &MetricConfig,
    normalization_id: &str,
) -> Result<PreprocessedImage> {
    let norm = Normalization::from_id(normalization_id)?;
    let side = config.input_side;
    if side == 0 {
        return Err(Error::Config("encoder input side is zero".into()));
    }
    let src = image.pixels();
    let xs = bilinear_taps(src.width(), side);
    let ys = bilinear_taps(src.height(), side);
    let mut data = Vec::with_capacity(side * side * 3);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            let p00 = src.pixel(x0, y0);
            let p01 = src.pixel(x1, y0);
            let p10 = src.pixel(x0, y1);
            let p11 = src.pixel(x1, y1);
            for c in 0..3 {
                let top = (1.0 - wx) * f64::from(p00[c]) + wx * f64::from(p01[c]);
                let bottom = (1.0 - wx) * f64::from(p10[c]) + wx * f64::from(p11[c]);
                data.push(norm.apply(c, (1.0 - wy) * top + wy * bottom));
            }
        }
    }
    PreprocessedImage::new(side, data, norm)
}

pub fn resize_mask_nearest(mask: &EraseMask, side: usize) -> EraseMask {
    mask.resize_nearest(side, side)
}

/// A cell is masked iff at least `threshold` of its `p x p` pixels are masked.
pub fn downsample_mask(
    mask: &EraseMask,
    patch_size: usize,
    grid: (usize, usize),
    threshold: f64,
) -> Result<PatchMask> {
    let (rows, cols) = grid;
    if patch_size == 0 || mask.dimensions() != (cols * patch_size, rows * patch_size) {
        return Err(Error::Config(format!(
            "mask {:?} does not tile into a {rows}x{cols} grid of {patch_size}px patches",
            mask.dimensions()
        )));
    }
    let needed = threshold * (patch_size * patch_size) as f64;
    let mut bits = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut count = 0usize;
            for y in r * patch_size..(r + 1) * patch_size {
                for x in c * patch_size..(c + 1) * patch_size {
                    count += usize::from(mask.get(x, y));
                }
            }
            bits.push(count as f64 >= needed);
        }
    }
    PatchMask::new(rows, cols, bits)
}
