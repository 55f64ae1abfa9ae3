//! CSV and JSON renderings of results.

use std::path::Path;

use serde::Serialize;
use varshift_core::analytic::ShiftScenario;
use varshift_core::diagnostics::ShiftReport;
use varshift_core::montecarlo::SweepRow;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Renders `rows` under an explicit header so empty tables still get one.
pub fn to_csv<S: Serialize>(header: &[&str], rows: &[S]) -> AppResult<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| AppError::invalid(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AppError::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| AppError::invalid(format!("csv: {e}")))
}

pub fn to_json<S: Serialize + ?Sized>(value: &S) -> AppResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> AppResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

pub const SHIFT_HEADER: [&str; 4] = ["layer", "moving_var", "real_var", "max_ratio"];

pub fn shift_report_csv(report: &ShiftReport) -> AppResult<String> {
    to_csv(&SHIFT_HEADER, &report.layers)
}

pub const SIMULATE_HEADER: [&str; 12] = [
    "scenario_id",
    "c",
    "v",
    "p",
    "d",
    "rho_x",
    "cos2theta",
    "beta",
    "analytic",
    "mc",
    "stderr",
    "z",
];

/// One line of the simulate table. Failed scenarios leave the numeric
/// result columns empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateRow {
    pub scenario_id: usize,
    pub c: f64,
    pub v: f64,
    pub p: f64,
    pub d: usize,
    pub rho_x: f64,
    pub cos2theta: f64,
    pub beta: f64,
    pub analytic: Option<f64>,
    pub mc: Option<f64>,
    pub stderr: Option<f64>,
    pub z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&SweepRow> for SimulateRow {
    fn from(r: &SweepRow) -> Self {
        let ok = r.error.is_none();
        let s = r.scenario;
        SimulateRow {
            scenario_id: r.scenario_id,
            c: s.c,
            v: s.v,
            p: s.retain_p,
            d: s.d,
            rho_x: s.rho_x,
            cos2theta: s.cos2theta,
            beta: s.beta,
            analytic: ok.then_some(r.analytic),
            mc: ok.then_some(r.mc.value),
            stderr: ok.then_some(r.mc.stderr),
            z: ok.then_some(r.z),
            error: r.error.clone(),
        }
    }
}

pub fn simulate_csv(rows: &[SimulateRow]) -> AppResult<String> {
    // the error text goes to stderr, not into the fixed-width table
    let trimmed: Vec<SimulateRow> = rows
        .iter()
        .cloned()
        .map(|mut r| {
            r.error = None;
            r
        })
        .collect();
    to_csv(&SIMULATE_HEADER, &trimmed)
}

pub const ANALYTIC_HEADER: [&str; 11] = [
    "case",
    "c",
    "v",
    "p",
    "d",
    "rho_x",
    "cos2theta",
    "beta",
    "var_train",
    "var_test",
    "ratio",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticRow {
    pub case: &'static str,
    pub c: f64,
    pub v: f64,
    pub p: f64,
    pub d: usize,
    pub rho_x: f64,
    pub cos2theta: f64,
    pub beta: f64,
    pub var_train: f64,
    pub var_test: f64,
    pub ratio: f64,
}

impl AnalyticRow {
    pub fn new(
        case: &'static str,
        s: &ShiftScenario,
        r: &varshift_core::analytic::ShiftResult,
    ) -> Self {
        AnalyticRow {
            case,
            c: s.c,
            v: s.v,
            p: s.retain_p,
            d: s.d,
            rho_x: s.rho_x,
            cos2theta: s.cos2theta,
            beta: s.beta,
            var_train: r.var_train,
            var_test: r.var_test,
            ratio: r.ratio,
        }
    }
}

pub const HISTORY_HEADER: [&str; 4] = ["epoch", "learning_rate", "loss", "accuracy"];
pub const CONSISTENCY_HEADER: [&str; 4] = [
    "train_mode_acc",
    "eval_mode_acc",
    "flip_rate",
    "single_pass_acc",
];

#[cfg(test)]
mod tests {
    use super::*;
    use varshift_core::diagnostics::LayerShift;

    #[test]
    fn shift_csv_layout() {
        let report = ShiftReport {
            layers: vec![LayerShift::new(1, 2.0, 1.0), LayerShift::new(2, 0.5, 0.25)],
            consistency: None,
        };
        let csv = shift_report_csv(&report).unwrap();
        assert_eq!(
            csv,
            "layer,moving_var,real_var,max_ratio\n1,2.0,1.0,2.0\n2,0.5,0.25,2.0\n"
        );
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn empty_table_keeps_header() {
        let rows: Vec<SimulateRow> = Vec::new();
        assert_eq!(
            simulate_csv(&rows).unwrap(),
            format!("{}\n", SIMULATE_HEADER.join(","))
        );
    }

    #[test]
    fn failed_rows_leave_blanks() {
        let row = SimulateRow {
            scenario_id: 3,
            c: 0.0,
            v: 1.0,
            p: 0.5,
            d: 1,
            rho_x: -0.5,
            cos2theta: 1.0,
            beta: 0.0,
            analytic: None,
            mc: None,
            stderr: None,
            z: None,
            error: Some("bad".into()),
        };
        let csv = simulate_csv(&[row]).unwrap();
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "3,0.0,1.0,0.5,1,-0.5,1.0,0.0,,,,"
        );
    }

    #[test]
    fn json_ends_with_newline() {
        let j = to_json(&vec![1, 2]).unwrap();
        assert!(j.ends_with("]\n"));
    }
}
