//! Evaluation protocol over scored samples: best-first binning by a
//! reference metric, correlations, summary statistics, the crop ablation
//! table, and agreement with pairwise human preferences.
//!
//! Conventions: standard deviations use the population divisor `n`;
//! correlations are computed per record unless the per-bin variant is asked
//! for; an exact score tie in a preference pair earns half credit.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{orientation_of, Orientation, REMOVE, REMOVE_NOCROP};
use crate::datasets::MaskSizeClass;
use crate::error::{Error, Result};
use crate::preprocess::CropBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove_score_nocrop: Option<f64>,
    /// Baseline values keyed by metric id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baselines: BTreeMap<String, f64>,
    pub mask_area_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_size_class: Option<MaskSizeClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_box: Option<CropBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl EvaluationRecord {
    pub fn new(id: impl Into<String>, mask_area_fraction: f64) -> Self {
        Self {
            id: id.into(),
            remove_score: None,
            remove_score_nocrop: None,
            baselines: BTreeMap::new(),
            mask_area_fraction,
            mask_size_class: None,
            crop_box: None,
            config_digest: None,
            tags: BTreeMap::new(),
        }
    }

    pub fn metric(&self, id: &str) -> Option<f64> {
        match id {
            REMOVE => self.remove_score,
            REMOVE_NOCROP => self.remove_score_nocrop,
            other => self.baselines.get(other).copied(),
        }
    }

    pub fn metric_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        if self.remove_score.is_some() {
            ids.push(REMOVE.to_string());
        }
        if self.remove_score_nocrop.is_some() {
            ids.push(REMOVE_NOCROP.to_string());
        }
        ids.extend(self.baselines.keys().cloned());
        ids
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric_ids().is_empty() {
            return Err(Error::Validation(format!("record `{}` carries no metric", self.id)));
        }
        Ok(())
    }
}

/// Reads a JSON-lines records file. A trailing partial line (an interrupted
/// write) is reported as a parse error.
pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
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
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// The single config digest shared by all records; mixed digests are an error.
pub fn common_digest(records: &[EvaluationRecord]) -> Result<Option<String>> {
    let mut digests: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        if let Some(d) = &r.config_digest {
            *digests.entry(d).or_default() += 1;
        }
    }
    match digests.len() {
        0 => Ok(None),
        1 => Ok(digests.keys().next().map(|d| d.to_string())),
        _ => Err(Error::Validation(format!(
            "records mix metric configurations: {}",
            digests
                .iter()
                .map(|(d, n)| format!("{d} ({n} records)"))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

fn metric_orientation(metric: &str, explicit: Option<Orientation>) -> Result<Orientation> {
    explicit
        .or_else(|| orientation_of(metric))
        .ok_or_else(|| Error::Config(format!("orientation of metric `{metric}` is unknown")))
}

fn column(records: &[EvaluationRecord], metric: &str) -> Result<Vec<f64>> {
    let missing: Vec<&str> = records
        .iter()
        .filter(|r| r.metric(metric).is_none())
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "{} record(s) lack `{metric}`: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(records.iter().filter_map(|r| r.metric(metric)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// Contiguous near-equal-count groups after sorting.
    #[default]
    EqualCount,
    /// Equal-width intervals of the sort metric's range.
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    /// `None` for an empty equal-width bin.
    pub target_mean: Option<f64>,
    pub sort_mean: Option<f64>,
    pub sort_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCurve {
    pub n_bins: usize,
    pub sort_metric: String,
    pub sort_orientation: Orientation,
    pub target_metric: String,
    pub binning: Binning,
    /// Best-to-worst under the sort metric.
    pub bins: Vec<Bin>,
}

impl BinCurve {
    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.count).collect()
    }

    /// Target means of the non-empty bins.
    pub fn means(&self) -> Vec<f64> {
        self.bins.iter().filter_map(|b| b.target_mean).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn bin_by_reference(
    records: &[EvaluationRecord],
    sort_metric: &str,
    sort_orientation: Option<Orientation>,
    target_metric: &str,
    n_bins: usize,
    binning: Binning,
) -> Result<BinCurve> {
    let orientation = metric_orientation(sort_metric, sort_orientation)?;
    let sort_vals = column(records, sort_metric)?;
    let target_vals = column(records, target_metric)?;
    let n = records.len();
    if n_bins == 0 || n_bins > n {
        return Err(Error::Validation(format!(
            "cannot split {n} records into {n_bins} bins"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| orientation.best_first(sort_vals[a], sort_vals[b]));

    let groups: Vec<Vec<usize>> = match binning {
        Binning::EqualCount => {
            let (base, extra) = (n / n_bins, n % n_bins);
            let mut groups = Vec::with_capacity(n_bins);
            let mut start = 0;
            for k in 0..n_bins {
                let len = base + usize::from(k < extra);
                groups.push(order[start..start + len].to_vec());
                start += len;
            }
            groups
        }
        Binning::EqualWidth => {
            let first = sort_vals[order[0]];
            let last = sort_vals[order[n - 1]];
            let width = (last - first) / n_bins as f64;
            let mut groups = vec![Vec::new(); n_bins];
            for &i in &order {
                let k = if width == 0.0 {
                    0
                } else {
                    (((sort_vals[i] - first) / width).floor() as usize).min(n_bins - 1)
                };
                groups[k].push(i);
            }
            groups
        }
    };

    let bins = groups
        .iter()
        .map(|g| {
            let sorts: Vec<f64> = g.iter().map(|&i| sort_vals[i]).collect();
            let targets: Vec<f64> = g.iter().map(|&i| target_vals[i]).collect();
            Bin {
                count: g.len(),
                target_mean: (!g.is_empty()).then(|| mean(&targets)),
                sort_mean: (!g.is_empty()).then(|| mean(&sorts)),
                sort_range: sorts
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
            }
        })
        .collect();

    Ok(BinCurve {
        n_bins,
        sort_metric: sort_metric.to_string(),
        sort_orientation: orientation,
        target_metric: target_metric.to_string(),
        binning,
        bins,
    })
}

/// Sample Pearson coefficient of paired values.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Validation(format!(
            "correlation needs at least two pairs, got {} and {} values",
            xs.len(),
            ys.len()
        )));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a variable has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

pub fn correlation(xs: &[f64], ys: &[f64], method: CorrelationMethod) -> Result<f64> {
    match method {
        CorrelationMethod::Pearson => pearson(xs, ys),
        CorrelationMethod::Spearman => pearson(&average_ranks(xs), &average_ranks(ys)),
    }
}

pub fn pearson_correlation(records: &[EvaluationRecord], metric_a: &str, metric_b: &str) -> Result<f64> {
    pearson(&column(records, metric_a)?, &column(records, metric_b)?)
}

pub fn record_correlation(
    records: &[EvaluationRecord],
    metric_a: &str,
    metric_b: &str,
    method: CorrelationMethod,
) -> Result<f64> {
    correlation(&column(records, metric_a)?, &column(records, metric_b)?, method)
}

/// Correlation between per-bin means of the sort metric and of the target.
pub fn per_bin_correlation(curve: &BinCurve, method: CorrelationMethod) -> Result<f64> {
    let (sorts, targets): (Vec<f64>, Vec<f64>) = curve
        .bins
        .iter()
        .filter_map(|b| Some((b.sort_mean?, b.target_mean?)))
        .unzip();
    correlation(&sorts, &targets, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation (divisor n).
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        return Err(Error::Validation("summary of an empty set".into()));
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Ok(Summary {
        n: xs.len(),
        mean: m,
        std: var.sqrt(),
    })
}

pub fn summary_stats(records: &[EvaluationRecord], metric: &str) -> Result<Summary> {
    mean_std(&column(records, metric)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub corpus: String,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Correlation with the reference metric, when one is present.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub reference_metric: Option<String>,
    pub correlation: CorrelationMethod,
    pub std_convention: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render_text(&self) -> String {
        let rho_label = match &self.reference_metric {
            Some(m) => format!("rho vs {m}"),
            None => "rho".to_string(),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<20} {:>6} {:>8} {:>8} {:>14}",
            "corpus", "method", "n", "mu", "sigma", rho_label
        );
        for r in &self.rows {
            let rho = r.rho.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:<12} {:<20} {:>6} {:>8.3} {:>8.3} {:>14}",
                r.corpus, r.method, r.n, r.mean, r.std, rho
            );
        }
        s
    }
}

/// Crop ablation: one row per ReMOVE variant present in each corpus.
pub fn ablation_table(
    corpora: &[(&str, &[EvaluationRecord])],
    reference_metric: Option<&str>,
    method: CorrelationMethod,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for &(corpus, records) in corpora {
        for (metric, label) in [(REMOVE_NOCROP, "ReMOVE (w/o crop)"), (REMOVE, "ReMOVE")] {
            if !records.iter().any(|r| r.metric(metric).is_some()) {
                continue;
            }
            let s = summary_stats(records, metric)?;
            let rho = match reference_metric {
                Some(reference) if records.iter().all(|r| r.metric(reference).is_some()) => {
                    Some(record_correlation(records, metric, reference, method)?)
                }
                _ => None,
            };
            rows.push(AblationRow {
                corpus: corpus.to_string(),
                method: label.to_string(),
                metric: metric.to_string(),
                n: s.n,
                mean: s.mean,
                std: s.std,
                rho,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation("no ReMOVE scores to tabulate".into()));
    }
    Ok(AblationTable {
        reference_metric: reference_metric.map(str::to_string),
        correlation: method,
        std_convention: "population".into(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub rater: String,
    pub a: String,
    pub b: String,
    pub human_choice: Choice,
}

pub fn read_preference_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let pair: PreferencePair = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if pair.a == pair.b {
            return Err(parse_err(format!("pair compares `{}` with itself", pair.a)));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Fraction of pairs where the metric prefers the image the rater chose.
pub fn agreement_rate(
    pairs: &[PreferencePair],
    scores: &HashMap<String, f64>,
    orientation: Orientation,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("no preference pairs".into()));
    }
    let mut missing: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.a.as_str(), p.b.as_str()])
        .filter(|id| !scores.contains_key(*id))
        .collect();
    missing.sort_unstable();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "{} image id(s) have no score: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let credit: f64 = pairs
        .iter()
        .map(|p| {
            let (sa, sb) = (scores[&p.a], scores[&p.b]);
            if sa == sb {
                return 0.5;
            }
            let preferred = if orientation.best_first(sa, sb).is_lt() {
                Choice::A
            } else {
                Choice::B
            };
            if preferred == p.human_choice {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    Ok(credit / pairs.len() as f64)
}
