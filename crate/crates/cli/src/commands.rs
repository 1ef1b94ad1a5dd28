use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use remove_core::analysis::{agreement_rate, read_preference_pairs, read_records};
use remove_core::baselines::{orientation_of, REMOVE};
use remove_core::datasets::{
    generate_synthetic_corpus, procedural_background, procedural_mask, CorpusSpec, ForeignSource,
};
use remove_core::{remove_score, EditedImage, EraseMask, Error, RgbRaster};

use crate::{parse_list, write_file, MetricArgs};

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    pub image: PathBuf,
    /// Single-channel mask, 255 on the erased region.
    pub mask: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Print the full result as one JSON object.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON result to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let cfg = args.metric.metric_config()?;
    let pixels = RgbRaster::load(&args.image).context("loading image")?;
    let mask = EraseMask::load(&args.mask, args.metric.mask_threshold).context("loading mask")?;
    let encoder = args.metric.build_encoder(&cfg)?;
    let id = args
        .image
        .file_stem()
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    let image = EditedImage::new(id, pixels);
    let result = remove_score(&image, &mask, encoder.as_ref(), &cfg)
        .with_context(|| format!("scoring {}", args.image.display()))?;
    let json = serde_json::to_string(&result)?;
    if let Some(out) = &args.out {
        write_file(out, format!("{json}\n"))?;
    }
    if args.json {
        println!("{json}");
        return Ok(());
    }
    println!("ReMOVE {}", result.score);
    println!("encoder {}", result.encoder_id);
    println!("config {}", result.config_digest);
    match (result.crop_box, result.crop_mask_fraction) {
        (Some(b), Some(f)) => println!(
            "crop x0={} y0={} side={} mask_fraction={f:.4}",
            b.x0, b.y0, b.side
        ),
        _ => println!("crop none"),
    }
    println!(
        "patches masked={} unmasked={}",
        result.masked_patch_count, result.unmasked_patch_count
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Directory of background images (png or jpeg).
    #[arg(long, required_unless_present = "procedural")]
    pub backgrounds: Option<PathBuf>,
    /// Directory of single-channel mask images.
    #[arg(long, required_unless_present = "procedural")]
    pub masks: Option<PathBuf>,
    /// Synthesize `<backgrounds>,<masks>` textured backgrounds and masks instead of reading directories.
    #[arg(long, value_name = "N,M")]
    pub procedural: Option<String>,
    /// Side of procedural backgrounds.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds per (background, mask) cell, counting up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    #[arg(long, default_value = "flat-random-color")]
    pub foreign: String,
    #[arg(long)]
    pub mask_threshold: Option<u8>,
    #[arg(long)]
    pub out: PathBuf,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!(Error::Validation(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let (backgrounds, masks) = match &args.procedural {
        Some(spec) => {
            let counts: Vec<usize> = parse_list(spec, "procedural count")?;
            let [nb, nm] = counts[..] else {
                bail!(Error::Config(format!("--procedural expects N,M, got `{spec}`")));
            };
            if args.size < 8 {
                bail!(Error::Config("--size must be at least 8".into()));
            }
            let bgs = (0..nb)
                .map(|i| {
                    let seed = args.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                    EditedImage::new(format!("procedural-{i:03}"), procedural_background(args.size, args.size, seed))
                })
                .collect::<Vec<_>>();
            let ms = (0..nm)
                .map(|j| {
                    let seed = args.seed.wrapping_mul(1_000_003).wrapping_add(0x5EED_0000 + j as u64);
                    procedural_mask(args.size, args.size, seed)
                })
                .collect::<Vec<_>>();
            (bgs, ms)
        }
        None => {
            let bg_dir = args.backgrounds.as_deref().expect("required by clap");
            let mask_dir = args.masks.as_deref().expect("required by clap");
            let bgs = image_files(bg_dir)?
                .iter()
                .map(|p| Ok(EditedImage::new(stem(p), RgbRaster::load(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let ms = image_files(mask_dir)?
                .iter()
                .map(|p| Ok(EraseMask::load(p, args.mask_threshold)?))
                .collect::<Result<Vec<_>>>()?;
            (bgs, ms)
        }
    };
    if backgrounds.is_empty() || masks.is_empty() {
        bail!(Error::Config("need at least one background and one mask".into()));
    }
    let spec = CorpusSpec {
        alphas: parse_list(&args.alphas, "alpha")?,
        seeds: (0..args.replicates.max(1)).map(|k| args.seed + k).collect(),
        foreign_source: args.foreign.parse::<ForeignSource>()?,
    };
    let manifest = generate_synthetic_corpus(&backgrounds, &masks, &spec, &args.out)?;
    println!(
        "wrote {} samples to {}",
        manifest.rows.len(),
        args.out.join("manifest.jsonl").display()
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct AgreementArgs {
    /// JSON-lines preference pairs: {"rater", "a", "b", "human_choice": "A"|"B"}.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// Comma-separated metric ids; defaults to every metric in the records.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub metric: String,
    pub pairs: usize,
    pub agreement: f64,
}

pub fn agreement_report(args: &AgreementArgs) -> Result<Vec<AgreementRow>> {
    let pairs = read_preference_pairs(&args.pairs)?;
    let records = read_records(&args.records)?;
    let known: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let unresolved: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.a.as_str(), p.b.as_str()])
        .filter(|id| !known.contains(id))
        .collect();
    if !unresolved.is_empty() {
        bail!(Error::Validation(format!(
            "{} id(s) in {} have no record: {}",
            unresolved.len(),
            args.pairs.display(),
            unresolved.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let metrics: Vec<String> = match &args.metrics {
        Some(list) => parse_list(list, "metric")?,
        None => {
            let mut ids: Vec<String> = Vec::new();
            for r in &records {
                for id in r.metric_ids() {
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
            }
            ids.sort_by_key(|id| (!id.starts_with(REMOVE), id.clone()));
            ids
        }
    };
    metrics
        .into_iter()
        .map(|metric| {
            let orientation = orientation_of(&metric)
                .ok_or_else(|| Error::Config(format!("orientation of metric `{metric}` is unknown")))?;
            let scores: HashMap<String, f64> = records
                .iter()
                .filter_map(|r| r.metric(&metric).map(|v| (r.id.clone(), v)))
                .collect();
            let rate = agreement_rate(&pairs, &scores, orientation)
                .with_context(|| format!("agreement for {metric}"))?;
            Ok(AgreementRow {
                metric,
                pairs: pairs.len(),
                agreement: rate,
            })
        })
        .collect()
}

pub fn agreement(args: &AgreementArgs) -> Result<()> {
    let rows = agreement_report(args)?;
    let mut text = String::new();
    let _ = writeln!(text, "{:<20} {:>7} {:>10}", "metric", "pairs", "agreement");
    for r in &rows {
        let _ = writeln!(text, "{:<20} {:>7} {:>9.1}%", r.metric, r.pairs, r.agreement * 100.0);
    }
    print!("{text}");
    if let Some(out) = &args.out {
        write_file(out, serde_json::to_string_pretty(&rows)? + "\n")?;
    }
    Ok(())
}
