use crate::encoders::PatchEncoder;
use crate::error::Result;
use crate::metric::PatchEmbeddingGrid;
use crate::preprocess::PreprocessedImage;

/// Closed-form stand-in for a ViT: each patch maps to its per-channel mean
/// and population standard deviation, `(mR, mG, mB, sR, sG, sB)`.
#[derive(Debug, Clone)]
pub struct MockPoolingEncoder {
    id: String,
    input_side: usize,
    patch_size: usize,
}

impl MockPoolingEncoder {
    pub const DIM: usize = 6;

    pub fn new(input_side: usize, patch_size: usize) -> Self {
        assert!(
            patch_size > 0 && input_side % patch_size == 0,
            "input side {input_side} must be a multiple of patch size {patch_size}"
        );
        Self {
            id: format!("mock-pool/p{patch_size}/s{input_side}"),
            input_side,
            patch_size,
        }
    }
}

impl PatchEncoder for MockPoolingEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn input_side(&self) -> usize {
        self.input_side
    }

    fn normalization_id(&self) -> &str {
        "identity"
    }

    fn embedding_dim(&self) -> Option<usize> {
        Some(Self::DIM)
    }

    fn extract(&self, image: &PreprocessedImage) -> Result<PatchEmbeddingGrid> {
        let p = self.patch_size;
        let cells = image.side() / p;
        let n = (p * p) as f64;
        let mut features = Vec::with_capacity(cells * cells * Self::DIM);
        for row in 0..cells {
            for col in 0..cells {
                let mut sum = [0.0f64; 3];
                for y in row * p..(row + 1) * p {
                    for x in col * p..(col + 1) * p {
                        let px = image.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += px[c];
                        }
                    }
                }
                let mean = sum.map(|s| s / n);
                let mut sq = [0.0f64; 3];
                for y in row * p..(row + 1) * p {
                    for x in col * p..(col + 1) * p {
                        let px = image.pixel(x, y);
                        for c in 0..3 {
                            sq[c] += (px[c] - mean[c]).powi(2);
                        }
                    }
                }
                features.extend_from_slice(&mean);
                features.extend(sq.iter().map(|s| (s / n).sqrt()));
            }
        }
        PatchEmbeddingGrid::new(cells, cells, Self::DIM, p, self.id.clone(), features)
    }
}
