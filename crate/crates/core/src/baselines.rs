//! Comparison metrics: LPIPS and CLIPScore (no-reference and
//! full-reference captions) behind adapter traits, plus a pixel MSE distance
//! usable when no perceptual backend is installed.
//!
//! None of these are needed to compute ReMOVE itself.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backend::{require_weights, ExternalBackend};
use crate::error::{Error, Result};
use crate::raster::{EditedImage, RgbRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    /// Orders `a` before `b` when `a` is the better value.
    pub fn best_first(self, a: f64, b: f64) -> Ordering {
        match self {
            Orientation::LowerBetter => a.total_cmp(&b),
            Orientation::HigherBetter => b.total_cmp(&a),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::LowerBetter => Orientation::HigherBetter,
            Orientation::HigherBetter => Orientation::LowerBetter,
        }
    }
}

pub const REMOVE: &str = "ReMOVE";
pub const REMOVE_NOCROP: &str = "ReMOVE-nocrop";
pub const MSE: &str = "MSE";
pub const CS_NR: &str = "CS-NR";
pub const CS_FR: &str = "CS-FR";

/// Orientation implied by a metric id, by family prefix.
pub fn orientation_of(metric_id: &str) -> Option<Orientation> {
    if metric_id.starts_with("LPIPS") || metric_id.starts_with(MSE) {
        Some(Orientation::LowerBetter)
    } else if metric_id.starts_with(REMOVE) || metric_id.starts_with("CS-") {
        Some(Orientation::HigherBetter)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub metric_id: String,
    pub value: f64,
    pub orientation: Orientation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl BaselineScore {
    fn new(metric_id: &str, value: f64, orientation: Orientation, prompt: Option<String>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::ContractViolation(format!(
                "{metric_id} backend returned non-finite value {value}"
            )));
        }
        Ok(Self {
            metric_id: metric_id.to_string(),
            value,
            orientation,
            prompt,
        })
    }
}

/// Full-reference distance between an edited image and its reference.
pub trait ReferenceDistance: Send + Sync {
    fn metric_id(&self) -> &str;
    fn distance(&self, edited: &RgbRaster, reference: &RgbRaster) -> Result<f64>;
}

/// Mean squared error over all channels; a cheap stand-in for LPIPS.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelMse;

impl ReferenceDistance for PixelMse {
    fn metric_id(&self) -> &str {
        MSE
    }

    fn distance(&self, edited: &RgbRaster, reference: &RgbRaster) -> Result<f64> {
        let n = edited.data().len() as f64;
        Ok(edited
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum::<f64>()
            / n)
    }
}

fn resolve_reference<'a>(
    edited: &'a EditedImage,
    reference: Option<&'a RgbRaster>,
    what: &str,
) -> Result<&'a RgbRaster> {
    let reference = reference
        .or_else(|| edited.ground_truth())
        .ok_or_else(|| Error::ReferenceRequired(format!("{what} needs a ground truth for `{}`", edited.id())))?;
    if reference.dimensions() != edited.pixels().dimensions() {
        return Err(Error::Validation(format!(
            "reference for `{}` is {:?}, image is {:?}",
            edited.id(),
            reference.dimensions(),
            edited.pixels().dimensions()
        )));
    }
    Ok(reference)
}

/// Perceptual distance to `reference`, or to the sample's ground truth when `None`.
pub fn lpips_score(
    backend: &dyn ReferenceDistance,
    edited: &EditedImage,
    reference: Option<&RgbRaster>,
) -> Result<BaselineScore> {
    let reference = resolve_reference(edited, reference, backend.metric_id())?;
    let value = backend.distance(edited.pixels(), reference)?;
    BaselineScore::new(backend.metric_id(), value, Orientation::LowerBetter, None)
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &RgbRaster) -> Result<String>;
}

pub trait ClipScorer: Send + Sync {
    /// Scaled image-text similarity, higher is better.
    fn score(&self, image: &RgbRaster, prompt: &str) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipMode {
    /// Caption generated from the edited image itself.
    #[serde(rename = "NR")]
    NoReference,
    /// Caption generated from the ground truth.
    #[serde(rename = "FR")]
    FullReference,
}

impl ClipMode {
    pub fn metric_id(self) -> &'static str {
        match self {
            ClipMode::NoReference => CS_NR,
            ClipMode::FullReference => CS_FR,
        }
    }
}

pub fn clip_score(
    scorer: &dyn ClipScorer,
    captioner: &dyn Captioner,
    edited: &EditedImage,
    mode: ClipMode,
) -> Result<BaselineScore> {
    let source = match mode {
        ClipMode::NoReference => edited.pixels(),
        ClipMode::FullReference => resolve_reference(edited, None, CS_FR)?,
    };
    let prompt = captioner.caption(source)?;
    clip_score_with_prompt(scorer, edited, &prompt, mode)
}

pub fn clip_score_with_prompt(
    scorer: &dyn ClipScorer,
    edited: &EditedImage,
    prompt: &str,
    mode: ClipMode,
) -> Result<BaselineScore> {
    if prompt.trim().is_empty() {
        return Err(Error::Validation(format!(
            "empty prompt for {} on `{}`",
            mode.metric_id(),
            edited.id()
        )));
    }
    let value = scorer.score(edited.pixels(), prompt)?;
    BaselineScore::new(
        mode.metric_id(),
        value,
        Orientation::HigherBetter,
        Some(prompt.to_string()),
    )
}

/// Content digest of a raster at 8-bit precision.
pub fn image_digest(image: &RgbRaster) -> String {
    let mut h = Sha256::new();
    h.update((image.width() as u64).to_le_bytes());
    h.update((image.height() as u64).to_le_bytes());
    h.update(image.to_rgb8().as_raw());
    hex::encode(h.finalize())
}

/// Caption memo keyed by image digest, optionally persisted as
/// `<digest>\t<json-string caption>` lines.
pub struct CachedCaptioner<C> {
    inner: C,
    store: Mutex<BTreeMap<String, String>>,
    path: Option<PathBuf>,
    hits: AtomicUsize,
}

impl<C: Captioner> CachedCaptioner<C> {
    pub fn in_memory(inner: C) -> Self {
        Self {
            inner,
            store: Mutex::new(BTreeMap::new()),
            path: None,
            hits: AtomicUsize::new(0),
        }
    }

    pub fn persistent(inner: C, path: &Path) -> Result<Self> {
        let mut store = BTreeMap::new();
        if path.exists() {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = line
                    .split_once('\t')
                    .and_then(|(k, v)| serde_json::from_str::<String>(v).ok().map(|v| (k.to_string(), v)));
                let (key, caption) = parsed.ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected `<digest>\\t<caption>`".into(),
                })?;
                store.insert(key, caption);
            }
        }
        Ok(Self {
            inner,
            store: Mutex::new(store),
            path: Some(path.to_path_buf()),
            hits: AtomicUsize::new(0),
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(AtomicOrdering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<C: Captioner> Captioner for CachedCaptioner<C> {
    fn caption(&self, image: &RgbRaster) -> Result<String> {
        let key = image_digest(image);
        if let Some(hit) = self.store.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, AtomicOrdering::Relaxed);
            return Ok(hit.clone());
        }
        let caption = self.inner.caption(image)?;
        let mut store = self.store.lock().expect("cache lock");
        if store.insert(key.clone(), caption.clone()).is_none() {
            if let Some(path) = &self.path {
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                let encoded = serde_json::to_string(&caption).expect("string serializes");
                writeln!(f, "{key}\t{encoded}").map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(caption)
    }
}

/// LPIPS, captioning and CLIPScore served by one external process.
///
/// Requests: `{"task": "lpips", "image_a", "image_b", "net"}` -> `{"value"}`,
/// `{"task": "caption", "image"}` -> `{"caption"}`,
/// `{"task": "clip_score", "image", "prompt"}` -> `{"value"}`. Images are PNG paths.
#[derive(Debug, Clone)]
pub struct ExternalBaselines {
    backend: ExternalBackend,
    weights: Option<PathBuf>,
    lpips_id: String,
    lpips_net: String,
}

impl ExternalBaselines {
    pub fn load(command: &str, weights: Option<&Path>, lpips_net: &str) -> Result<Self> {
        let weights = match weights {
            Some(w) => Some(require_weights(Some(w), "baseline", "pass --baseline-weights")?),
            None => None,
        };
        Ok(Self {
            backend: ExternalBackend::from_command_line(command)?,
            weights,
            lpips_id: format!("LPIPS-{lpips_net}"),
            lpips_net: lpips_net.to_string(),
        })
    }

    fn request(
        &self,
        mut req: serde_json::Value,
        images: &[(&str, &RgbRaster)],
    ) -> Result<serde_json::Value> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        for (key, img) in images {
            let path = dir.path().join(format!("{key}.png"));
            img.save_png(&path)?;
            req[*key] = json!(path);
        }
        if let Some(w) = &self.weights {
            req["weights"] = json!(w);
        }
        self.backend.call(&req)?.map_err(|f| Error::EncoderFailure {
            encoder_id: format!("baselines({})", self.backend.describe()),
            message: f.0,
        })
    }

    fn value(resp: &serde_json::Value) -> Result<f64> {
        resp.get("value")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Error::ContractViolation(format!("response {resp} lacks a numeric `value`")))
    }
}

impl ReferenceDistance for ExternalBaselines {
    fn metric_id(&self) -> &str {
        &self.lpips_id
    }

    fn distance(&self, edited: &RgbRaster, reference: &RgbRaster) -> Result<f64> {
        let resp = self.request(json!({"task": "lpips", "net": self.lpips_net}), &[("image_a", edited), ("image_b", reference)])?;
        Self::value(&resp)
    }
}

impl Captioner for ExternalBaselines {
    fn caption(&self, image: &RgbRaster) -> Result<String> {
        let resp = self.request(json!({"task": "caption"}), &[("image", image)])?;
        match resp.get("caption").and_then(serde_json::Value::as_str) {
            Some(c) if !c.trim().is_empty() => Ok(c.to_string()),
            _ => Err(Error::ContractViolation(format!(
                "caption response {resp} lacks a non-empty `caption`"
            ))),
        }
    }
}

impl ClipScorer for ExternalBaselines {
    fn score(&self, image: &RgbRaster, prompt: &str) -> Result<f64> {
        let resp = self.request(json!({"task": "clip_score", "prompt": prompt}), &[("image", image)])?;
        Self::value(&resp)
    }
}
