//! SVG line charts of bin curves.

use std::path::Path;

use plotters::prelude::*;

use crate::analysis::BinCurve;
use crate::error::{Error, Result};

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// One series per labelled curve; x is the bin index (best first), y the target mean.
pub fn plot_bin_curves(path: &Path, title: &str, curves: &[(String, &BinCurve)]) -> Result<()> {
    let draw_err = |e: String| Error::io(path, std::io::Error::other(e));
    let points: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|(_, c)| {
            c.bins
                .iter()
                .enumerate()
                .filter_map(|(i, b)| b.target_mean.map(|m| ((i + 1) as f64, m)))
                .collect()
        })
        .collect();
    let all_y = points.iter().flatten().map(|p| p.1);
    let (lo, hi) = all_y.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let (lo, hi) = if lo.is_finite() {
        let pad = ((hi - lo) * 0.1).max(1e-3);
        (lo - pad, hi + pad)
    } else {
        (0.0, 1.0)
    };
    let max_x = curves.iter().map(|(_, c)| c.bins.len()).max().unwrap_or(1).max(2) as f64;
    let x_desc = curves
        .first()
        .map(|(_, c)| format!("partition (sorted by {}, best first)", c.sort_metric))
        .unwrap_or_default();
    let y_desc = curves
        .first()
        .map(|(_, c)| format!("mean {}", c.target_metric))
        .unwrap_or_default();

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .caption(title, ("sans-serif", 22))
        .x_label_area_size(45)
        .y_label_area_size(60)
        .build_cartesian_2d(1.0..max_x, lo..hi)
        .map_err(|e| draw_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    for (i, ((label, _), pts)) in curves.iter().zip(points).enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts, &color))
            .map_err(|e| draw_err(e.to_string()))?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    root.present().map_err(|e| draw_err(e.to_string()))?;
    Ok(())
}
