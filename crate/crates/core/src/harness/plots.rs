use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Report};

/// One row of the tidy learning-curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub controller: String,
    pub seed: u64,
    pub update: usize,
    #[serde(rename = "return")]
    pub ret: f64,
}

pub const CURVES_CSV: &str = "curves.csv";
pub const PLOT_SPEC: &str = "curves.vl.json";
pub const REPORT_JSON: &str = "report.json";

/// Learning curves in long form. Controllers evaluated once are repeated
/// at every update any learning controller reports, so they draw as flat
/// reference lines.
pub fn tidy_rows(report: &Report) -> Vec<CurveRow> {
    let mut grid: Vec<usize> = report
        .results
        .iter()
        .filter(|r| r.curve.len() > 1)
        .flat_map(|r| r.curve.iter().map(|p| p.0))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    let mut rows = Vec::new();
    for r in &report.results {
        let row = |&(update, ret): &(usize, f64)| CurveRow {
            controller: r.controller.clone(),
            seed: r.seed,
            update,
            ret,
        };
        match r.curve.as_slice() {
            [(_, ret)] if !grid.is_empty() => rows.extend(grid.iter().map(|&u| row(&(u, *ret)))),
            curve => rows.extend(curve.iter().map(row)),
        }
    }
    rows
}

/// Vega-Lite description: mean return per controller over seeds with a
/// one-standard-deviation band, read from the tidy CSV next to it.
fn plot_spec(title: &str) -> serde_json::Value {
    let x = serde_json::json!({ "field": "update", "type": "quantitative", "title": "training step" });
    let color = serde_json::json!({ "field": "controller", "type": "nominal" });
    serde_json::json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": title,
        "data": { "url": CURVES_CSV, "format": { "type": "csv" } },
        "width": 640,
        "height": 360,
        "layer": [
            {
                "mark": { "type": "errorband", "extent": "stdev", "opacity": 0.2 },
                "encoding": {
                    "x": x,
                    "y": { "field": "return", "type": "quantitative", "title": "cumulative return" },
                    "color": color
                }
            },
            {
                "mark": "line",
                "encoding": {
                    "x": x,
                    "y": { "aggregate": "mean", "field": "return", "type": "quantitative" },
                    "color": color
                }
            }
        ]
    })
}

/// Writes the tidy CSV, its plot description and the full report into `dir`
/// and returns the written paths.
pub fn emit_plots(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if report.results.is_empty() {
        return Err(HarnessError::Invalid("nothing to plot: the report has no runs".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let csv_path = dir.join(CURVES_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in tidy_rows(report) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(&csv_path, e))?;

    let title = format!("{:?} protocol: test-set cumulative return", report.protocol).to_lowercase();
    let spec_path = dir.join(PLOT_SPEC);
    let spec = serde_json::to_string_pretty(&plot_spec(&title))?;
    std::fs::write(&spec_path, spec).map_err(|e| HarnessError::io(&spec_path, e))?;

    let report_path = dir.join(REPORT_JSON);
    std::fs::write(&report_path, serde_json::to_string_pretty(report)?)
        .map_err(|e| HarnessError::io(&report_path, e))?;
    Ok(vec![csv_path, spec_path, report_path])
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
