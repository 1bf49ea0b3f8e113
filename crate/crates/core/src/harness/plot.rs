use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::metrics::read_metrics_csv;
use super::run::{summarize, CheckpointSummary, Stat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    RiskAverseRate,
    MeanReturn,
    EmpiricalCvar,
}

impl PlotMetric {
    fn label(self) -> &'static str {
        match self {
            PlotMetric::RiskAverseRate => "risk-averse path rate",
            PlotMetric::MeanReturn => "mean return",
            PlotMetric::EmpiricalCvar => "empirical CVaR of return",
        }
    }

    fn pick(self, c: &CheckpointSummary) -> Stat {
        match self {
            PlotMetric::RiskAverseRate => c.risk_averse_rate,
            PlotMetric::MeanReturn => c.mean_return,
            PlotMetric::EmpiricalCvar => c.empirical_cvar,
        }
    }
}

/// Loads every `metrics_<seed>.csv` in `dir` and summarizes across seeds.
pub fn load_run(dir: &Path) -> Result<Vec<CheckpointSummary>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("metrics_") && name.ends_with(".csv") {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::Usage(format!("no metrics_<seed>.csv files in {}", dir.display())));
    }
    files.sort();
    let runs = files.iter().map(|p| read_metrics_csv(p)).collect::<Result<Vec<_>>>()?;
    summarize(&runs.iter().map(Vec::as_slice).collect::<Vec<_>>())
}

/// Renders the mean ± one standard error of `metric` for each labelled run.
pub fn plot_runs(runs: &[(String, Vec<CheckpointSummary>)], metric: PlotMetric, out: &Path) -> Result<()> {
    let points = runs.iter().flat_map(|(_, r)| r.iter());
    let (mut x_max, mut y_min, mut y_max) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
    for c in points {
        let s = metric.pick(c);
        x_max = x_max.max(c.step);
        y_min = y_min.min(s.mean - s.stderr);
        y_max = y_max.max(s.mean + s.stderr);
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    if metric == PlotMetric::RiskAverseRate {
        (y_min, y_max) = (0.0, 1.0);
    } else if y_max - y_min < 1e-9 {
        (y_min, y_max) = (y_min - 1.0, y_max + 1.0);
    }

    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(0usize..x_max, y_min..y_max)?;
        chart
            .configure_mesh()
            .x_desc("environment steps")
            .y_desc(metric.label())
            .draw()?;
        for (i, (label, run)) in runs.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let upper: Vec<(usize, f64)> = run.iter().map(|c| (c.step, metric.pick(c).mean + metric.pick(c).stderr)).collect();
            let lower: Vec<(usize, f64)> = run.iter().map(|c| (c.step, metric.pick(c).mean - metric.pick(c).stderr)).collect();
            chart.draw_series(LineSeries::new(upper, color.mix(0.3)))?;
            chart.draw_series(LineSeries::new(lower, color.mix(0.3)))?;
            chart
                .draw_series(LineSeries::new(run.iter().map(|c| (c.step, metric.pick(c).mean)), color.stroke_width(2)))?
                .label(label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| Error::io(out, std::io::Error::other(e.to_string())))
}
