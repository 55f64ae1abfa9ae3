//! Parallel execution of experiment grids.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use varshift_core::experiment::{run_cell, CellOutcome};
use varshift_core::network::Placement;

use crate::config::{ExperimentConfig, GridCell};
use crate::error::{AppError, AppResult};
use crate::report::{shift_report_csv, to_csv, to_json, write_file};
use crate::svg::{line_chart, Series};

pub const CELLS_HEADER: [&str; 19] = [
    "cell",
    "section",
    "placement",
    "value",
    "width",
    "seed",
    "status",
    "train_acc",
    "test_acc",
    "gm_max_ratio",
    "train_mode_acc",
    "eval_mode_acc",
    "flip_rate",
    "adjusted_train_acc",
    "adjusted_test_acc",
    "adjusted_gm_max_ratio",
    "adjusted_train_mode_acc",
    "adjusted_eval_mode_acc",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub cell: String,
    pub section: String,
    pub placement: &'static str,
    pub value: f64,
    pub width: usize,
    pub seed: u64,
    pub status: &'static str,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub gm_max_ratio: Option<f64>,
    pub train_mode_acc: Option<f64>,
    pub eval_mode_acc: Option<f64>,
    pub flip_rate: Option<f64>,
    pub adjusted_train_acc: Option<f64>,
    pub adjusted_test_acc: Option<f64>,
    pub adjusted_gm_max_ratio: Option<f64>,
    pub adjusted_train_mode_acc: Option<f64>,
    pub adjusted_eval_mode_acc: Option<f64>,
    pub error: String,
}

impl CellRow {
    fn new(cell: &GridCell, result: &Result<CellOutcome, String>) -> Self {
        let mut row = CellRow {
            cell: cell.id().to_string(),
            section: cell.section.clone(),
            placement: cell.placement.name(),
            value: cell.value,
            width: cell.width,
            seed: cell.seed,
            status: "ok",
            train_acc: None,
            test_acc: None,
            gm_max_ratio: None,
            train_mode_acc: None,
            eval_mode_acc: None,
            flip_rate: None,
            adjusted_train_acc: None,
            adjusted_test_acc: None,
            adjusted_gm_max_ratio: None,
            adjusted_train_mode_acc: None,
            adjusted_eval_mode_acc: None,
            error: String::new(),
        };
        match result {
            Ok(outcome) => {
                let t = &outcome.trained;
                row.train_acc = Some(t.train_acc);
                row.test_acc = Some(t.test_acc);
                row.gm_max_ratio = Some(t.report.geometric_mean_max_ratio());
                if let Some(c) = t.report.consistency {
                    row.train_mode_acc = Some(c.train_mode_acc);
                    row.eval_mode_acc = Some(c.eval_mode_acc);
                    row.flip_rate = Some(c.flip_rate);
                }
                if let Some(a) = &outcome.adjusted {
                    row.adjusted_train_acc = Some(a.train_acc);
                    row.adjusted_test_acc = Some(a.test_acc);
                    row.adjusted_gm_max_ratio = Some(a.report.geometric_mean_max_ratio());
                    if let Some(c) = a.report.consistency {
                        row.adjusted_train_mode_acc = Some(c.train_mode_acc);
                        row.adjusted_eval_mode_acc = Some(c.eval_mode_acc);
                    }
                }
            }
            Err(e) => {
                row.status = "failed";
                row.error = e.clone();
            }
        }
        row
    }
}

/// Per-section, per-width aggregate of one grid value over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub section: String,
    pub placement: &'static str,
    pub value: f64,
    pub width: usize,
    pub completed: usize,
    /// Geometric mean over seeds of each layer's max ratio.
    pub layer_max_ratio: Vec<f64>,
    pub gm_max_ratio: Option<f64>,
    pub mean_test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub config: String,
    pub total: usize,
    pub failed: usize,
    pub groups: Vec<GroupSummary>,
    pub cells: Vec<CellRow>,
}

fn geometric_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some((xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp())
}

fn summarize(cells: &[GridCell], results: &[Result<CellOutcome, String>]) -> Vec<GroupSummary> {
    let mut groups: Vec<(&GridCell, Vec<&CellOutcome>)> = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        let pos = groups.iter().position(|(g, _)| {
            g.section == cell.section
                && g.value.to_bits() == cell.value.to_bits()
                && g.width == cell.width
        });
        let idx = pos.unwrap_or_else(|| {
            groups.push((cell, Vec::new()));
            groups.len() - 1
        });
        if let Ok(o) = result {
            groups[idx].1.push(o);
        }
    }
    groups
        .into_iter()
        .map(|(cell, outcomes)| {
            let per_seed: Vec<Vec<f64>> = outcomes
                .iter()
                .map(|o| o.trained.report.max_ratios())
                .collect();
            let depth = per_seed.iter().map(Vec::len).min().unwrap_or(0);
            let layer_max_ratio = (0..depth)
                .map(|l| {
                    let col: Vec<f64> = per_seed.iter().map(|r| r[l]).collect();
                    geometric_mean(&col).unwrap_or(f64::NAN)
                })
                .collect();
            let gms: Vec<f64> = outcomes
                .iter()
                .map(|o| o.trained.report.geometric_mean_max_ratio())
                .collect();
            let accs: Vec<f64> = outcomes.iter().map(|o| o.trained.test_acc).collect();
            GroupSummary {
                section: cell.section.clone(),
                placement: cell.placement.name(),
                value: cell.value,
                width: cell.width,
                completed: outcomes.len(),
                layer_max_ratio,
                gm_max_ratio: geometric_mean(&gms),
                mean_test_acc: (!accs.is_empty())
                    .then(|| accs.iter().sum::<f64>() / accs.len() as f64),
            }
        })
        .collect()
}

fn charts(groups: &[GroupSummary]) -> Vec<(String, String)> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for g in groups {
        let k = (g.section.clone(), g.width);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(section, width)| {
            let series: Vec<Series> = groups
                .iter()
                .filter(|g| g.section == section && g.width == width)
                .map(|g| Series {
                    label: format!("{} {}", value_label(g.placement), g.value),
                    points: g
                        .layer_max_ratio
                        .iter()
                        .enumerate()
                        .map(|(i, r)| ((i + 1) as f64, *r))
                        .collect(),
                })
                .collect();
            let title = format!("{section} (width {width})");
            (
                format!("{section}_w{width}.svg"),
                line_chart(&title, "layer", "max_ratio", &series),
            )
        })
        .collect()
}

fn value_label(placement: &str) -> &'static str {
    if placement == Placement::UoutB.name() {
        "beta"
    } else {
        "drop"
    }
}

/// Runs every cell of `config` in parallel and writes the tables and charts
/// listed in the README under `out_dir`. Results do not depend on the
/// thread count. Returns [`AppError::CellFailures`] after writing
/// everything if any cell failed.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> AppResult<ExperimentSummary> {
    let cells = config.cells();
    let results: Vec<Result<CellOutcome, String>> = cells
        .par_iter()
        .map(|c| run_cell(&c.spec).map(|(_, o)| o).map_err(|e| e.to_string()))
        .collect();

    for (cell, result) in cells.iter().zip(&results) {
        if let Ok(o) = result {
            let dir = out_dir.join("shift");
            write_file(
                &dir.join(format!("{}.csv", cell.id())),
                &shift_report_csv(&o.trained.report)?,
            )?;
            if let Some(a) = &o.adjusted {
                write_file(
                    &dir.join(format!("{}.adjusted.csv", cell.id())),
                    &shift_report_csv(&a.report)?,
                )?;
            }
        }
    }

    let rows: Vec<CellRow> = cells
        .iter()
        .zip(&results)
        .map(|(c, r)| CellRow::new(c, r))
        .collect();
    write_file(&out_dir.join("cells.csv"), &to_csv(&CELLS_HEADER, &rows)?)?;

    let groups = summarize(&cells, &results);
    for (name, svg) in charts(&groups) {
        write_file(&out_dir.join(name), &svg)?;
    }

    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let summary = ExperimentSummary {
        config: config
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        total: rows.len(),
        failed,
        groups,
        cells: rows,
    };
    write_file(&out_dir.join("summary.json"), &to_json(&summary)?)?;
    if failed > 0 {
        return Err(AppError::CellFailures {
            failed,
            total: summary.total,
        });
    }
    Ok(summary)
}
