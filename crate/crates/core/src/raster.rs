//! Pixel containers: RGB rasters, edited samples and binary erase masks.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Interleaved RGB raster with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "raster must be non-empty, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Validation(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "raster must be non-empty");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        Self::from_fn(w, h, |x, y| self.pixel(x0 + x, y0 + y))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    /// Quantizes to 8 bits per channel (round half up, clamped).
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// An inpainted image, optionally paired with its ground-truth restoration.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedImage {
    id: String,
    pixels: RgbRaster,
    ground_truth: Option<RgbRaster>,
}

impl EditedImage {
    pub fn new(id: impl Into<String>, pixels: RgbRaster) -> Self {
        Self {
            id: id.into(),
            pixels,
            ground_truth: None,
        }
    }

    pub fn with_ground_truth(mut self, ground_truth: RgbRaster) -> Result<Self> {
        if ground_truth.dimensions() != self.pixels.dimensions() {
            return Err(Error::Validation(format!(
                "ground truth for `{}` is {:?}, image is {:?}",
                self.id,
                ground_truth.dimensions(),
                self.pixels.dimensions()
            )));
        }
        self.ground_truth = Some(ground_truth);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &RgbRaster {
        &self.pixels
    }

    pub fn ground_truth(&self) -> Option<&RgbRaster> {
        self.ground_truth.as_ref()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

/// Binary pixel mask; `true` marks a pixel targeted for inpainting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EraseMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl EraseMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::Validation(format!(
                "mask {width}x{height} has {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask must be non-empty");
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Axis-aligned rectangle `[x0, x0 + w) x [y0, y0 + h)` set to 1.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.area() as f64 / self.bits.len() as f64
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Nearest-neighbour resize sampling at output pixel centers.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let nearest = |o: usize, input: usize, output: usize| ((2 * o + 1) * input / (2 * output)).min(input - 1);
        let xs: Vec<usize> = (0..width).map(|o| nearest(o, self.width, width)).collect();
        let ys: Vec<usize> = (0..height).map(|o| nearest(o, self.height, height)).collect();
        Self::from_fn(width, height, |x, y| self.get(xs[x], ys[y]))
    }

    /// Loads a single-channel PNG where 0 keeps and 255 marks the pixel.
    ///
    /// Intermediate values are rejected unless `binarize_threshold` is given,
    /// in which case values `>= threshold` become 1.
    pub fn load(path: &Path, binarize_threshold: Option<u8>) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_gray8(&img.to_luma8(), binarize_threshold).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn from_gray8(img: &GrayImage, binarize_threshold: Option<u8>) -> Result<Self> {
        let (w, h) = img.dimensions();
        let mut bits = Vec::with_capacity((w * h) as usize);
        for (i, &v) in img.as_raw().iter().enumerate() {
            let bit = match (v, binarize_threshold) {
                (0, _) => false,
                (255, _) => true,
                (v, Some(t)) => v >= t,
                (v, None) => {
                    return Err(Error::Validation(format!(
                        "mask value {v} at pixel ({}, {}) is neither 0 nor 255; pass a binarization threshold",
                        i % w as usize,
                        i / w as usize
                    )))
                }
            };
            bits.push(bit);
        }
        Self::new(w as usize, h as usize, bits)
    }

    pub fn to_gray8(&self) -> GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}
