//! Tables, bin curves and plots derived from a records file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use remove_core::analysis::{
    ablation_table, bin_by_reference, common_digest, per_bin_correlation, read_records, record_correlation,
    summary_stats, AblationTable, BinCurve, Binning, CorrelationMethod, EvaluationRecord, Summary,
};
use remove_core::baselines::{MSE, REMOVE, REMOVE_NOCROP};
use remove_core::datasets::{partition_by_mask_size, BoundaryPolicy};
use remove_core::plot::plot_bin_curves;
use remove_core::Error;

use crate::{create_dir, write_file, AnalysisArgs, Partition};

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus name used in tables and plot titles.
    #[arg(long, default_value = "corpus")]
    pub label: String,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    let report = build_report(&records, &args.label, &args.analysis)?;
    write_report(&report, &args.out)?;
    print!("{}", report.table_text());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelledCurve {
    pub label: String,
    pub curve: BinCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_bin_rho: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationEntry {
    pub metric: String,
    pub reference: String,
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub corpus: String,
    pub records: usize,
    pub config_digest: Option<String>,
    pub std_convention: &'static str,
    pub correlation_method: CorrelationMethod,
    pub binning: Binning,
    pub summaries: BTreeMap<String, Summary>,
    pub sort_metric: Option<String>,
    pub correlations: Vec<CorrelationEntry>,
    pub ablation: AblationTable,
    pub curves: Vec<LabelledCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_size_boundaries: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mask_size_curves: Vec<LabelledCurve>,
}

fn metrics_in_all(records: &[EvaluationRecord]) -> Vec<String> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    first
        .metric_ids()
        .into_iter()
        .filter(|m| records.iter().all(|r| r.metric(m).is_some()))
        .collect()
}

fn default_sort_metric(metrics: &[String]) -> Option<String> {
    metrics
        .iter()
        .find(|m| m.starts_with("LPIPS"))
        .or_else(|| metrics.iter().find(|m| m.as_str() == MSE))
        .cloned()
}

fn curve(
    records: &[EvaluationRecord],
    label: String,
    sort: &str,
    target: &str,
    args: &AnalysisArgs,
) -> Result<LabelledCurve> {
    let n_bins = args.n_bins.min(records.len());
    if n_bins < args.n_bins {
        log::warn!("{label}: only {} records, using {n_bins} bins", records.len());
    }
    let curve = bin_by_reference(records, sort, None, target, n_bins, args.binning.into())?;
    let per_bin_rho = if args.per_bin_rho {
        per_bin_correlation(&curve, args.correlation.into()).ok()
    } else {
        None
    };
    Ok(LabelledCurve { label, curve, per_bin_rho })
}

pub fn build_report(records: &[EvaluationRecord], corpus: &str, args: &AnalysisArgs) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::Validation("no records to analyse".into()).into());
    }
    if args.n_bins == 0 {
        return Err(Error::Config("--n-bins must be positive".into()).into());
    }
    let config_digest = common_digest(records)?;
    let method: CorrelationMethod = args.correlation.into();
    let metrics = metrics_in_all(records);
    let sort_metric = match &args.sort_metric {
        Some(m) if !metrics.contains(m) => {
            return Err(Error::Validation(format!(
                "sort metric `{m}` is not present on every record; available: {}",
                metrics.join(", ")
            ))
            .into())
        }
        Some(m) => Some(m.clone()),
        None => default_sort_metric(&metrics),
    };

    let mut summaries = BTreeMap::new();
    for m in &metrics {
        summaries.insert(m.clone(), summary_stats(records, m)?);
    }

    let targets: Vec<&String> = metrics.iter().filter(|m| Some(*m) != sort_metric.as_ref()).collect();
    let mut correlations = Vec::new();
    let mut curves = Vec::new();
    if let Some(sort) = &sort_metric {
        for target in &targets {
            let (rho, note) = match record_correlation(records, target, sort, method) {
                Ok(r) => (Some(r), None),
                Err(e @ Error::UndefinedCorrelation(_)) => (None, Some(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            correlations.push(CorrelationEntry {
                metric: target.to_string(),
                reference: sort.clone(),
                rho,
                note,
            });
            curves.push(curve(records, target.to_string(), sort, target, args)?);
        }
    }

    let ablation = ablation_table(&[(corpus, records)], sort_metric.as_deref(), method)?;

    let mut mask_size_boundaries = None;
    let mut mask_size_curves = Vec::new();
    if args.partition == Some(Partition::MaskSize) {
        let primary = [REMOVE, REMOVE_NOCROP]
            .into_iter()
            .find(|m| metrics.iter().any(|x| x == m));
        match (&sort_metric, primary) {
            (Some(sort), Some(target)) => {
                let items = records.iter().map(|r| (r.clone(), r.mask_area_fraction)).collect();
                let part = partition_by_mask_size(items, BoundaryPolicy::Terciles);
                mask_size_boundaries = Some(part.boundaries);
                for (class, members) in &part.classes {
                    if members.is_empty() {
                        continue;
                    }
                    mask_size_curves.push(curve(members, class.label().to_string(), sort, target, args)?);
                }
            }
            _ => log::warn!("mask-size partition needs a reference metric and a ReMOVE score"),
        }
    }

    Ok(Report {
        corpus: corpus.to_string(),
        records: records.len(),
        config_digest,
        std_convention: "population",
        correlation_method: method,
        binning: args.binning.into(),
        summaries,
        sort_metric,
        correlations,
        ablation,
        curves,
        mask_size_boundaries,
        mask_size_curves,
    })
}

impl Report {
    pub fn table_text(&self) -> String {
        let mut s = self.ablation.render_text();
        let _ = writeln!(s, "\nsigma: population; rho: {:?}", self.correlation_method);
        for c in &self.correlations {
            let rho = c.rho.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "rho({}, {}) = {rho}", c.metric, c.reference);
        }
        for c in self.curves.iter().chain(&self.mask_size_curves) {
            if let Some(r) = c.per_bin_rho {
                let _ = writeln!(s, "per-bin rho [{}] = {r:.4}", c.label);
            }
        }
        if let Some((a, b)) = self.mask_size_boundaries {
            let _ = writeln!(s, "mask-size boundaries: small < {a:.4} <= medium < {b:.4} <= large");
        }
        s
    }
}

pub fn write_report(report: &Report, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    write_file(&out_dir.join("summary.json"), serde_json::to_string_pretty(report)? + "\n")?;
    write_file(&out_dir.join("table.txt"), report.table_text())?;
    let remove_curves: Vec<(String, &BinCurve)> = report
        .curves
        .iter()
        .filter(|c| c.label.starts_with(REMOVE))
        .map(|c| (c.label.clone(), &c.curve))
        .collect();
    if let (Some(sort), false) = (&report.sort_metric, remove_curves.is_empty()) {
        let title = format!("{}: ReMOVE over {sort}-sorted partitions", report.corpus);
        plot_bin_curves(&out_dir.join("curves.svg"), &title, &remove_curves)?;
    }
    if !report.mask_size_curves.is_empty() {
        let series: Vec<(String, &BinCurve)> = report
            .mask_size_curves
            .iter()
            .map(|c| (c.label.clone(), &c.curve))
            .collect();
        let title = format!("{}: ReMOVE by mask size", report.corpus);
        plot_bin_curves(&out_dir.join("mask_size.svg"), &title, &series)?;
    }
    Ok(())
}
