//! Corpus evaluation: resumable per-sample scoring followed by analysis.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use remove_core::analysis::EvaluationRecord;
use remove_core::baselines::{
    clip_score, lpips_score, CachedCaptioner, ClipMode, ExternalBaselines, PixelMse, CS_FR, CS_NR, MSE,
};
use remove_core::datasets::{load_manifest, Manifest, SampleManifestRow};
use remove_core::{remove_score, Error, MetricConfig, PatchEncoder};

use crate::report::{build_report, write_report, Report};
use crate::{create_dir, write_file, AnalysisArgs, BaselineKind, MetricArgs, RunConfig};

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// JSON-lines manifest of {id, edited_path, mask_path, ground_truth_path?, tags?}.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Comma-separated reference metrics to compute alongside ReMOVE.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
    pub baselines: Vec<BaselineKind>,
    /// Command line of the LPIPS / caption / CLIP process.
    #[arg(long)]
    pub baseline_cmd: Option<String>,
    #[arg(long)]
    pub baseline_weights: Option<PathBuf>,
    #[arg(long, default_value = "alex")]
    pub lpips_net: String,
    /// Skip the uncropped variant used by the ablation table.
    #[arg(long)]
    pub no_ablation: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after scoring this many new samples; rerunning resumes.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub reason: String,
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub resumed: usize,
    pub scored: usize,
    pub failures: Vec<Failure>,
    /// `false` when `--limit` stopped the run before every row was attempted.
    pub complete: bool,
    pub report: Option<Report>,
}

struct Baselines {
    kinds: Vec<BaselineKind>,
    external: Option<ExternalBaselines>,
    captioner: Option<CachedCaptioner<ExternalBaselines>>,
}

impl Baselines {
    fn load(args: &EvaluateArgs) -> Result<Self> {
        let kinds: Vec<BaselineKind> = args
            .baselines
            .iter()
            .copied()
            .filter(|k| *k != BaselineKind::None)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let needs_external = kinds
            .iter()
            .any(|k| matches!(k, BaselineKind::Lpips | BaselineKind::CsNr | BaselineKind::CsFr));
        let external = if needs_external {
            let cmd = match &args.baseline_cmd {
                Some(c) => c.clone(),
                None => format!(
                    "python3 {}",
                    remove_core::encoders::scripts_dir().join("baselines_backend.py").display()
                ),
            };
            Some(ExternalBaselines::load(&cmd, args.baseline_weights.as_deref(), &args.lpips_net)?)
        } else {
            None
        };
        let captioner = match &external {
            Some(ext) if kinds.iter().any(|k| matches!(k, BaselineKind::CsNr | BaselineKind::CsFr)) => {
                create_dir(&args.out)?;
                Some(CachedCaptioner::persistent(ext.clone(), &args.out.join("captions.tsv"))?)
            }
            _ => None,
        };
        Ok(Self { kinds, external, captioner })
    }

    fn metric_ids(&self, lpips_net: &str) -> BTreeSet<String> {
        self.kinds
            .iter()
            .filter_map(|k| match k {
                BaselineKind::None => None,
                BaselineKind::Mse => Some(MSE.to_string()),
                BaselineKind::Lpips => Some(format!("LPIPS-{lpips_net}")),
                BaselineKind::CsNr => Some(CS_NR.to_string()),
                BaselineKind::CsFr => Some(CS_FR.to_string()),
            })
            .collect()
    }
}

struct ScoringContext<'a> {
    manifest: &'a Manifest,
    cfg: &'a MetricConfig,
    nocrop_cfg: MetricConfig,
    ablation: bool,
    digest: String,
    mask_threshold: Option<u8>,
    baselines: &'a Baselines,
}

fn score_row(
    ctx: &ScoringContext<'_>,
    encoder: &dyn PatchEncoder,
    row: &SampleManifestRow,
) -> remove_core::Result<EvaluationRecord> {
    let (image, mask) = ctx.manifest.load_sample(row, ctx.mask_threshold)?;
    let mut rec = EvaluationRecord::new(row.id.clone(), mask.area_fraction());
    rec.tags = row.tags.clone();
    rec.config_digest = Some(ctx.digest.clone());
    if ctx.cfg.use_crop {
        let r = remove_score(&image, &mask, encoder, ctx.cfg)?;
        rec.remove_score = Some(r.score);
        rec.crop_box = r.crop_box;
    }
    if ctx.ablation || !ctx.cfg.use_crop {
        rec.remove_score_nocrop = Some(remove_score(&image, &mask, encoder, &ctx.nocrop_cfg)?.score);
    }
    for kind in &ctx.baselines.kinds {
        let external = || ctx.baselines.external.as_ref().expect("external baselines loaded");
        let score = match kind {
            BaselineKind::None => continue,
            BaselineKind::Mse => lpips_score(&PixelMse, &image, None)?,
            BaselineKind::Lpips => lpips_score(external(), &image, None)?,
            BaselineKind::CsNr | BaselineKind::CsFr => {
                let mode = if *kind == BaselineKind::CsNr { ClipMode::NoReference } else { ClipMode::FullReference };
                let captioner = ctx.baselines.captioner.as_ref().expect("captioner loaded");
                clip_score(external(), captioner, &image, mode)?
            }
        };
        rec.baselines.insert(score.metric_id, score.value);
    }
    Ok(rec)
}

/// Reads the records already on disk, truncating a partially written last line.
fn load_existing(path: &Path) -> Result<Vec<EvaluationRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of an interrupted record",
            path.display(),
            bytes.len() - complete
        );
        let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
        f.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
    }
    let text = String::from_utf8_lossy(&bytes[..complete]);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvaluationRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn check_resumable(
    existing: &[EvaluationRecord],
    manifest: &Manifest,
    digest: &str,
    baseline_ids: &BTreeSet<String>,
    with_crop: bool,
    with_nocrop: bool,
    path: &Path,
) -> Result<()> {
    let ids: HashSet<&str> = manifest.rows.iter().map(|r| r.id.as_str()).collect();
    for rec in existing {
        if rec.config_digest.as_deref() != Some(digest) {
            return Err(Error::Validation(format!(
                "{} holds records from configuration {} but this run uses {digest}; use a fresh --out",
                path.display(),
                rec.config_digest.as_deref().unwrap_or("<none>")
            ))
            .into());
        }
        let keys: BTreeSet<String> = rec.baselines.keys().cloned().collect();
        if &keys != baseline_ids
            || rec.remove_score.is_some() != with_crop
            || rec.remove_score_nocrop.is_some() != with_nocrop
        {
            return Err(Error::Validation(format!(
                "record `{}` in {} carries different metrics than this run requests; use a fresh --out",
                rec.id,
                path.display()
            ))
            .into());
        }
        if !ids.contains(rec.id.as_str()) {
            return Err(Error::Validation(format!(
                "record `{}` in {} is not in the manifest",
                rec.id,
                path.display()
            ))
            .into());
        }
    }
    Ok(())
}

fn corpus_label(manifest: &Path) -> String {
    manifest
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "corpus".into())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<EvaluateOutcome> {
    let cfg = args.metric.metric_config()?;
    let manifest = load_manifest(&args.manifest).context("loading manifest")?;
    let encoder = args.metric.build_encoder(&cfg)?;
    let encoder_id = encoder.encoder_id().to_string();
    drop(encoder);
    let baselines = Baselines::load(args)?;
    create_dir(&args.out)?;

    let ablation = !args.no_ablation;
    let run_config = RunConfig {
        command: "evaluate".into(),
        manifest: args.manifest.clone(),
        encoder_id: encoder_id.clone(),
        weights: args.metric.encoder_options(&cfg).weights,
        metric: cfg.clone(),
        ablation,
        baselines: baselines.kinds.clone(),
        out_dir: args.out.clone(),
        workers: args.workers,
    };
    write_file(&args.out.join("run_config.json"), serde_json::to_string_pretty(&run_config)? + "\n")?;

    let digest = cfg.digest(&encoder_id);
    let records_path = args.out.join("records.jsonl");
    let existing = load_existing(&records_path)?;
    let with_nocrop = ablation || !cfg.use_crop;
    check_resumable(
        &existing,
        &manifest,
        &digest,
        &baselines.metric_ids(&args.lpips_net),
        cfg.use_crop,
        with_nocrop,
        &records_path,
    )?;
    let done: HashSet<String> = existing.iter().map(|r| r.id.clone()).collect();
    let pending: Vec<&SampleManifestRow> = manifest.rows.iter().filter(|r| !done.contains(&r.id)).collect();
    let to_score = args.limit.map_or(pending.len(), |l| l.min(pending.len()));
    if !existing.is_empty() {
        log::info!("resuming: {} records present, {} pending", existing.len(), pending.len());
    }

    let ctx = ScoringContext {
        manifest: &manifest,
        cfg: &cfg,
        nocrop_cfg: MetricConfig { use_crop: false, ..cfg.clone() },
        ablation,
        digest,
        mask_threshold: args.metric.mask_threshold,
        baselines: &baselines,
    };
    let workers = args.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&records_path)
        .map_err(|e| Error::io(&records_path, e))?;

    let mut scored = 0;
    let mut failures = Vec::new();
    for chunk in pending[..to_score].chunks(workers * 8) {
        let results: Vec<remove_core::Result<EvaluationRecord>> = pool.install(|| {
            chunk
                .par_iter()
                .map_init(
                    || args.metric.build_encoder(&cfg),
                    |encoder, row| match encoder {
                        Ok(enc) => score_row(&ctx, enc.as_ref(), row),
                        Err(e) => Err(Error::EncoderFailure {
                            encoder_id: encoder_id.clone(),
                            message: format!("{e:#}"),
                        }),
                    },
                )
                .collect()
        });
        for (row, result) in chunk.iter().zip(results) {
            match result {
                Ok(rec) => {
                    append(&mut file, &rec, &records_path)?;
                    scored += 1;
                }
                Err(e) => {
                    log::warn!("{}: {e}", row.id);
                    failures.push(Failure {
                        id: row.id.clone(),
                        stage: e.stage().map(|s| s.to_string()),
                        reason: e.root().to_string(),
                    });
                }
            }
        }
        log::info!("scored {}/{}", scored + failures.len(), to_score);
    }
    drop(file);

    let failures_path = args.out.join("failures.jsonl");
    let mut failure_text = String::new();
    for f in &failures {
        failure_text.push_str(&serde_json::to_string(f)?);
        failure_text.push('\n');
    }
    write_file(&failures_path, failure_text)?;
    if !failures.is_empty() {
        eprintln!(
            "{} sample(s) failed and were skipped; see {}",
            failures.len(),
            failures_path.display()
        );
    }

    let complete = to_score == pending.len();
    if !complete {
        eprintln!(
            "stopped after {to_score} of {} pending samples; rerun the same command to resume",
            pending.len()
        );
        return Ok(EvaluateOutcome {
            resumed: existing.len(),
            scored,
            failures,
            complete,
            report: None,
        });
    }

    let records = load_existing(&records_path)?;
    let report = if records.is_empty() {
        None
    } else {
        let report = build_report(&records, &corpus_label(&args.manifest), &args.analysis)?;
        write_report(&report, &args.out)?;
        print!("{}", report.table_text());
        Some(report)
    };
    println!(
        "{} records ({} new, {} failed) in {}",
        records.len(),
        scored,
        failures.len(),
        records_path.display()
    );
    Ok(EvaluateOutcome {
        resumed: existing.len(),
        scored,
        failures,
        complete,
        report,
    })
}

fn append(file: &mut File, rec: &EvaluationRecord, path: &Path) -> Result<()> {
    let mut line = serde_json::to_string(rec)?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
