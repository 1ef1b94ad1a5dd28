//! Sample manifests, mask-size partitioning and the synthetic degradation corpus.
//!
//! A manifest is a JSON-lines file. Each line is one sample:
//!
//! ```text
//! {"id": "s1", "edited_path": "edited/s1.png", "mask_path": "masks/s1.png",
//!  "ground_truth_path": "gt/s1.png", "tags": {"alpha": "0.5"}}
//! ```
//!
//! Paths are relative to the manifest's directory; `ground_truth_path` and
//! `tags` may be omitted. Blank lines are ignored.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{EditedImage, EraseMask, RgbRaster};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifestRow {
    pub id: String,
    pub edited_path: PathBuf,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub rows: Vec<SampleManifestRow>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn load_sample(
        &self,
        row: &SampleManifestRow,
        binarize_threshold: Option<u8>,
    ) -> Result<(EditedImage, EraseMask)> {
        let pixels = RgbRaster::load(&self.resolve(&row.edited_path))?;
        let mut image = EditedImage::new(row.id.clone(), pixels);
        if let Some(gt) = &row.ground_truth_path {
            image = image.with_ground_truth(RgbRaster::load(&self.resolve(gt))?)?;
        }
        let mask = EraseMask::load(&self.resolve(&row.mask_path), binarize_threshold)?;
        if mask.dimensions() != (image.width(), image.height()) {
            return Err(Error::Validation(format!(
                "sample `{}`: mask is {:?}, image is {:?}",
                row.id,
                mask.dimensions(),
                (image.width(), image.height())
            )));
        }
        Ok((image, mask))
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let row: SampleManifestRow =
            serde_json::from_str(line).map_err(|e| parse_err(format!("row {}: {e}", i + 1)))?;
        if row.id.is_empty() {
            return Err(parse_err("field `id` is empty".into()));
        }
        if !seen.insert(row.id.clone()) {
            return Err(parse_err(format!("duplicate id `{}`", row.id)));
        }
        rows.push(row);
    }
    let manifest = Manifest { base_dir, rows };

    let mut missing = Vec::new();
    for row in &manifest.rows {
        let paths = [Some(&row.edited_path), Some(&row.mask_path), row.ground_truth_path.as_ref()];
        for p in paths.into_iter().flatten() {
            let full = manifest.resolve(p);
            if !full.exists() {
                missing.push(format!("{} ({})", full.display(), row.id));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "{} referenced file(s) missing: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(manifest)
}

/// Writes the rows through a temporary file renamed into place, so a
/// manifest is either complete or absent.
pub fn write_manifest(path: &Path, rows: &[SampleManifestRow]) -> Result<()> {
    let tmp = path.with_extension("jsonl.partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        for row in rows {
            let line = serde_json::to_string(row).expect("row serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(&tmp, e))?;
        }
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSizeClass {
    Small,
    Medium,
    Large,
}

impl MaskSizeClass {
    pub const ALL: [MaskSizeClass; 3] = [MaskSizeClass::Small, MaskSizeClass::Medium, MaskSizeClass::Large];

    pub fn label(self) -> &'static str {
        match self {
            MaskSizeClass::Small => "small",
            MaskSizeClass::Medium => "medium",
            MaskSizeClass::Large => "large",
        }
    }

    /// `small` below the first boundary, `large` at or above the second.
    pub fn classify(area_fraction: f64, boundaries: (f64, f64)) -> Self {
        if area_fraction < boundaries.0 {
            MaskSizeClass::Small
        } else if area_fraction < boundaries.1 {
            MaskSizeClass::Medium
        } else {
            MaskSizeClass::Large
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPolicy {
    /// Empirical terciles of the corpus being partitioned.
    Terciles,
    Fixed(f64, f64),
}

#[derive(Debug, Clone)]
pub struct MaskSizePartition<T> {
    pub boundaries: (f64, f64),
    pub policy: BoundaryPolicy,
    pub classes: BTreeMap<MaskSizeClass, Vec<T>>,
    pub warnings: Vec<String>,
}

/// Labels items by mask area fraction.
pub fn partition_by_mask_size<T>(items: Vec<(T, f64)>, policy: BoundaryPolicy) -> MaskSizePartition<T> {
    let boundaries = match policy {
        BoundaryPolicy::Fixed(a, b) => (a, b),
        BoundaryPolicy::Terciles if items.is_empty() => (0.0, 0.0),
        BoundaryPolicy::Terciles => {
            let mut fr: Vec<f64> = items.iter().map(|(_, f)| *f).collect();
            fr.sort_by(f64::total_cmp);
            let n = fr.len();
            (fr[n / 3], fr[(2 * n / 3).min(n - 1)])
        }
    };
    let mut classes: BTreeMap<MaskSizeClass, Vec<T>> =
        MaskSizeClass::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for (item, f) in items {
        classes
            .get_mut(&MaskSizeClass::classify(f, boundaries))
            .expect("all classes present")
            .push(item);
    }
    let mut warnings = Vec::new();
    let total: usize = classes.values().map(Vec::len).sum();
    if total > 0 {
        let empty: Vec<&str> = classes
            .iter()
            .filter(|(_, v)| v.is_empty())
            .map(|(c, _)| c.label())
            .collect();
        if !empty.is_empty() {
            warnings.push(format!(
                "mask-size classes {} are empty (boundaries {:.4}, {:.4})",
                empty.join(", "),
                boundaries.0,
                boundaries.1
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    MaskSizePartition {
        boundaries,
        policy,
        classes,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForeignSource {
    InvertedColors,
    ShuffledPatches,
    FlatRandomColor,
}

impl ForeignSource {
    pub fn label(self) -> &'static str {
        match self {
            ForeignSource::InvertedColors => "inverted-colors",
            ForeignSource::ShuffledPatches => "shuffled-patches",
            ForeignSource::FlatRandomColor => "flat-random-color",
        }
    }
}

impl std::str::FromStr for ForeignSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverted-colors" => Ok(ForeignSource::InvertedColors),
            "shuffled-patches" => Ok(ForeignSource::ShuffledPatches),
            "flat-random-color" => Ok(ForeignSource::FlatRandomColor),
            other => Err(Error::Config(format!("unknown foreign source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    /// 0 restores the background exactly, 1 fills the mask with foreign content.
    pub alpha: f64,
    pub foreign_source: ForeignSource,
    pub seed: u64,
}

const SHUFFLE_BLOCK: usize = 8;

fn foreign_content(background: &RgbRaster, source: ForeignSource, seed: u64) -> RgbRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = background.dimensions();
    match source {
        ForeignSource::InvertedColors => {
            RgbRaster::from_fn(w, h, |x, y| background.pixel(x, y).map(|v| 1.0 - v))
        }
        ForeignSource::FlatRandomColor => {
            let rgb: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
            RgbRaster::filled(w, h, rgb)
        }
        ForeignSource::ShuffledPatches => {
            let bw = w.div_ceil(SHUFFLE_BLOCK);
            let bh = h.div_ceil(SHUFFLE_BLOCK);
            let mut order: Vec<usize> = (0..bw * bh).collect();
            order.shuffle(&mut rng);
            RgbRaster::from_fn(w, h, |x, y| {
                let src = order[(y / SHUFFLE_BLOCK) * bw + x / SHUFFLE_BLOCK];
                let sx = ((src % bw) * SHUFFLE_BLOCK + x % SHUFFLE_BLOCK).min(w - 1);
                let sy = ((src / bw) * SHUFFLE_BLOCK + y % SHUFFLE_BLOCK).min(h - 1);
                background.pixel(sx, sy)
            })
        }
    }
}

/// Blends foreign content into the masked pixels of `background`.
///
/// The result carries the background as its ground truth.
pub fn generate_degraded_sample(
    background: &EditedImage,
    mask: &EraseMask,
    spec: &DegradationSpec,
) -> Result<EditedImage> {
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(Error::Config(format!("alpha {} outside [0, 1]", spec.alpha)));
    }
    let bg = background.pixels();
    if mask.dimensions() != bg.dimensions() {
        return Err(Error::Validation(format!(
            "mask {:?} does not fit background {:?}",
            mask.dimensions(),
            bg.dimensions()
        )));
    }
    let foreign = foreign_content(bg, spec.foreign_source, spec.seed);
    let a = spec.alpha as f32;
    let out = RgbRaster::from_fn(bg.width(), bg.height(), |x, y| {
        let b = bg.pixel(x, y);
        if mask.get(x, y) {
            let f = foreign.pixel(x, y);
            [0, 1, 2].map(|c| (1.0 - a) * b[c] + a * f[c])
        } else {
            b
        }
    });
    EditedImage::new(background.id(), out).with_ground_truth(bg.clone())
}

/// Textured stand-in for a natural background: a colour gradient plus a few
/// random sinusoidal gratings and fine noise.
pub fn procedural_background(width: usize, height: usize, seed: u64) -> RgbRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top: [f32; 3] = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let bottom: [f32; 3] = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let waves: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.02..0.3),
                rng.gen_range(0.02..0.3),
                rng.gen_range(0.0..std::f32::consts::TAU),
                [rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)],
            )
        })
        .collect();
    let noise: Vec<f32> = (0..width * height).map(|_| rng.gen_range(-0.03..0.03)).collect();
    RgbRaster::from_fn(width, height, |x, y| {
        let t = y as f32 / (height.max(2) - 1) as f32;
        let mut px = [0, 1, 2].map(|c| top[c] * (1.0 - t) + bottom[c] * t);
        for (fx, fy, phase, amp) in &waves {
            let s = (fx * x as f32 + fy * y as f32 + phase).sin();
            for c in 0..3 {
                px[c] += amp[c] * s;
            }
        }
        let n = noise[y * width + x];
        px.map(|v| (v + n).clamp(0.0, 1.0))
    })
}

/// Random ellipse or rectangle covering roughly 2-25% of the image.
pub fn procedural_mask(width: usize, height: usize, seed: u64) -> EraseMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frac: f64 = rng.gen_range(0.02..0.25);
    let aspect: f64 = rng.gen_range(0.5..2.0);
    let area = frac * (width * height) as f64;
    let mw = ((area * aspect).sqrt().round() as usize).clamp(2, width - 1);
    let mh = ((area / aspect).sqrt().round() as usize).clamp(2, height - 1);
    let x0 = rng.gen_range(0..=width - mw);
    let y0 = rng.gen_range(0..=height - mh);
    if rng.gen_bool(0.5) {
        EraseMask::rect(width, height, x0, y0, mw, mh)
    } else {
        let (cx, cy) = (x0 as f64 + mw as f64 / 2.0, y0 as f64 + mh as f64 / 2.0);
        let (rx, ry) = (mw as f64 / 2.0, mh as f64 / 2.0);
        EraseMask::from_fn(width, height, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub foreign_source: ForeignSource,
}

/// Per-(seed, background, mask) stream; independent of alpha so every alpha
/// level of a cell blends toward the same foreign content.
fn cell_seed(seed: u64, background: usize, mask: usize) -> u64 {
    let mut z = seed ^ ((background as u64) << 32 | mask as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the cross product backgrounds x masks x seeds x alphas under
/// `out_dir` and returns the manifest, which is written last.
///
/// Layout: `ground_truth/bgIII.png`, `masks/bgIII_mJJJ.png`,
/// `edited/<row id>.png`, `manifest.jsonl`. Masks are resized
/// (nearest neighbour) to each background.
pub fn generate_synthetic_corpus(
    backgrounds: &[EditedImage],
    masks: &[EraseMask],
    spec: &CorpusSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    if backgrounds.is_empty() || masks.is_empty() || spec.alphas.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Config(
            "synthetic corpus needs at least one background, mask, alpha and seed".into(),
        ));
    }
    for dir in ["ground_truth", "masks", "edited"] {
        create_dir(&out_dir.join(dir))?;
    }

    struct Job {
        bg: usize,
        mask: usize,
        seed: u64,
        alpha: f64,
    }
    let mut jobs = Vec::new();
    for bg in 0..backgrounds.len() {
        for mask in 0..masks.len() {
            for &seed in &spec.seeds {
                for &alpha in &spec.alphas {
                    jobs.push(Job { bg, mask, seed, alpha });
                }
            }
        }
    }

    backgrounds.par_iter().enumerate().try_for_each(|(i, bg)| {
        bg.pixels().save_png(&out_dir.join(format!("ground_truth/bg{i:03}.png")))?;
        masks.iter().enumerate().try_for_each(|(j, m)| {
            m.resize_nearest(bg.width(), bg.height())
                .save_png(&out_dir.join(format!("masks/bg{i:03}_m{j:03}.png")))
        })
    })?;

    let rows: Vec<SampleManifestRow> = jobs
        .par_iter()
        .map(|job| {
            let bg = &backgrounds[job.bg];
            let mask = masks[job.mask].resize_nearest(bg.width(), bg.height());
            let degradation = DegradationSpec {
                alpha: job.alpha,
                foreign_source: spec.foreign_source,
                seed: cell_seed(job.seed, job.bg, job.mask),
            };
            let id = format!("bg{:03}-m{:03}-s{}-a{}", job.bg, job.mask, job.seed, job.alpha);
            let edited = generate_degraded_sample(bg, &mask, &degradation)?;
            let edited_path = PathBuf::from(format!("edited/{id}.png"));
            edited.pixels().save_png(&out_dir.join(&edited_path))?;
            let tags = BTreeMap::from([
                ("alpha".to_string(), job.alpha.to_string()),
                ("seed".to_string(), job.seed.to_string()),
                ("background".to_string(), bg.id().to_string()),
                ("mask".to_string(), job.mask.to_string()),
                ("foreign".to_string(), spec.foreign_source.label().to_string()),
            ]);
            Ok(SampleManifestRow {
                id,
                edited_path,
                mask_path: PathBuf::from(format!("masks/bg{:03}_m{:03}.png", job.bg, job.mask)),
                ground_truth_path: Some(PathBuf::from(format!("ground_truth/bg{:03}.png", job.bg))),
                tags,
            })
        })
        .collect::<Result<_>>()?;

    write_manifest(&out_dir.join("manifest.jsonl"), &rows)?;
    Ok(Manifest {
        base_dir: out_dir.to_path_buf(),
        rows,
    })
}
