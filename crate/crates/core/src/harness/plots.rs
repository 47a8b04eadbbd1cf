use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::config::TrainerConfig;
use super::metrics::read_column;
use crate::error::{Error, Result};

/// Maps the short metric names accepted on the command line to columns.
pub fn metric_column(metric: &str) -> &str {
    match metric {
        "reward" => "mean_extrinsic_reward",
        other => other,
    }
}

/// One curve: the across-seed mean and population std at each rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub seeds: usize,
    /// `(rollout_idx, mean, std)`.
    pub points: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSummary {
    pub column: String,
    pub path: PathBuf,
    pub series: Vec<Series>,
}

/// Groups runs by agent and aggregates `column` across seeds at each
/// logged rollout. Seeds missing a value at some rollout are skipped there.
pub fn aggregate(run_dirs: &[impl AsRef<Path>], column: &str) -> Result<Vec<Series>> {
    if run_dirs.is_empty() {
        return Err(Error::EmptyInput("plot runs"));
    }
    let mut groups: BTreeMap<String, Vec<Vec<(usize, f64)>>> = BTreeMap::new();
    for dir in run_dirs {
        let dir = dir.as_ref();
        let cfg = TrainerConfig::load(&dir.join("config.toml"))?;
        let col = read_column(&dir.join("metrics.csv"), column)?;
        groups.entry(cfg.agent.to_string()).or_default().push(col);
    }
    let mut out = Vec::new();
    for (label, runs) in groups {
        let mut at: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for run in &runs {
            for &(x, y) in run {
                at.entry(x).or_default().push(y);
            }
        }
        let points = at
            .into_iter()
            .map(|(x, ys)| {
                let n = ys.len() as f64;
                let mean = ys.iter().sum::<f64>() / n;
                let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
                (x, mean, var.sqrt())
            })
            .collect();
        out.push(Series {
            label,
            seeds: runs.len(),
            points,
        });
    }
    if out.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyInput("plot: no logged values"));
    }
    Ok(out)
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Draws one SVG with a mean line and ±1σ band per agent.
pub fn emit_plots(run_dirs: &[impl AsRef<Path>], metric: &str, out: &Path) -> Result<PlotSummary> {
    let column = metric_column(metric);
    let series = aggregate(run_dirs, column)?;
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());

    let pts = series.iter().flat_map(|s| &s.points);
    let x_max = pts.clone().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let y_lo = pts.clone().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let y_hi = pts.map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((y_hi - y_lo) * 0.05).max(1e-6);
    let seeds: Vec<String> = series.iter().map(|s| s.seeds.to_string()).collect();
    let seed_note = if series.iter().all(|s| s.seeds == series[0].seeds) {
        format!("{} seeds", series[0].seeds)
    } else {
        format!("{} seeds", seeds.join("/"))
    };

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    {
        let root = SVGBackend::new(out, (900, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{column}: mean ± 1σ over {seed_note}"), ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(0.0..x_max, (y_lo - pad)..(y_hi + pad))
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("rollout")
            .y_desc(column)
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut band: Vec<(f64, f64)> = s.points.iter().map(|p| (p.0 as f64, p.1 + p.2)).collect();
            band.extend(s.points.iter().rev().map(|p| (p.0 as f64, p.1 - p.2)));
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
                .map_err(|e| plot_err(&e))?;
            chart
                .draw_series(LineSeries::new(s.points.iter().map(|p| (p.0 as f64, p.1)), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    Ok(PlotSummary {
        column: column.to_string(),
        path: out.to_path_buf(),
        series,
    })
}
