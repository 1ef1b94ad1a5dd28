use std::path::PathBuf;
use std::sync::OnceLock;

use ndarray::{Array4, ArrayD};
use serde_json::json;

use crate::backend::{require_weights, ExternalBackend};
use crate::encoders::{EncoderOptions, PatchEncoder};
use crate::error::{Error, Result};
use crate::metric::PatchEmbeddingGrid;
use crate::preprocess::PreprocessedImage;

/// Directory holding the bundled inference scripts.
pub fn scripts_dir() -> PathBuf {
    std::env::var_os("REMOVE_SCRIPTS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scripts")))
}

/// Adapter for a segmentation-pretrained ViT image encoder hosted in an
/// external process.
///
/// The process receives `{"task": "encode", "input": <npy>, "output": <npy>,
/// "weights": ..., "device": ..., "variant": ...}`. The input holds a
/// `1 x 3 x S x S` float32 tensor already normalized; the process writes the
/// final spatial feature map as `1 x d_f x S/p x S/p` (or without the leading
/// batch axis) to the output path.
#[derive(Debug)]
pub struct ExternalVitEncoder {
    id: String,
    backend: ExternalBackend,
    weights: PathBuf,
    device: String,
    input_side: usize,
    patch_size: usize,
    dim: OnceLock<usize>,
}

impl ExternalVitEncoder {
    pub fn load(id: &str, opts: &EncoderOptions) -> Result<Self> {
        let weights = require_weights(
            opts.weights.as_deref(),
            id,
            "pass --weights <checkpoint> or set REMOVE_WEIGHTS_DIR",
        )?;
        let backend = match &opts.command {
            Some(cmd) => ExternalBackend::from_command_line(cmd)?,
            None => ExternalBackend::new(
                "python3",
                vec![scripts_dir().join("sam_backend.py").display().to_string()],
            ),
        };
        Ok(Self {
            id: id.to_string(),
            backend,
            weights,
            device: opts.device.clone(),
            input_side: opts.input_side,
            patch_size: opts.patch_size,
            dim: OnceLock::new(),
        })
    }

    fn failure(&self, message: impl Into<String>) -> Error {
        Error::EncoderFailure {
            encoder_id: self.id.clone(),
            message: message.into(),
        }
    }
}

impl PatchEncoder for ExternalVitEncoder {
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
        "imagenet"
    }

    fn embedding_dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn extract(&self, image: &PreprocessedImage) -> Result<PatchEmbeddingGrid> {
        let side = image.side();
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input_path = dir.path().join("input.npy");
        let output_path = dir.path().join("features.npy");

        let data = image.data();
        let tensor = Array4::from_shape_fn((1, 3, side, side), |(_, c, y, x)| {
            data[(y * side + x) * 3 + c] as f32
        });
        ndarray_npy::write_npy(&input_path, &tensor)
            .map_err(|e| self.failure(format!("writing input tensor: {e}")))?;

        let request = json!({
            "task": "encode",
            "variant": self.id,
            "weights": self.weights,
            "device": self.device,
            "input": input_path,
            "output": output_path,
        });
        if let Err(failure) = self.backend.call(&request)? {
            return Err(self.failure(failure.0));
        }

        let out: ArrayD<f32> = ndarray_npy::read_npy(&output_path)
            .map_err(|e| self.failure(format!("reading feature map: {e}")))?;
        let shape = out.shape().to_vec();
        let (dim, rows, cols) = match shape.as_slice() {
            [1, d, r, c] | [d, r, c] => (*d, *r, *c),
            other => {
                return Err(Error::ContractViolation(format!(
                    "encoder `{}` returned feature map of shape {other:?}",
                    self.id
                )))
            }
        };
        let expected = side / self.patch_size;
        if rows != expected || cols != expected {
            return Err(Error::ContractViolation(format!(
                "encoder `{}` returned a {rows}x{cols} grid, expected {expected}x{expected}",
                self.id
            )));
        }
        let known = *self.dim.get_or_init(|| dim);
        if known != dim {
            return Err(Error::ContractViolation(format!(
                "encoder `{}` changed d_f from {known} to {dim}",
                self.id
            )));
        }
        let flat = out
            .into_shape_with_order((dim, rows, cols))
            .map_err(|e| Error::ContractViolation(e.to_string()))?;
        let mut features = Vec::with_capacity(dim * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                features.extend((0..dim).map(|k| f64::from(flat[[k, r, c]])));
            }
        }
        PatchEmbeddingGrid::new(rows, cols, dim, self.patch_size, self.id.clone(), features)
    }
}
