//! Convergence tables from an existing `results.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::output::{fmt_f64, RESULTS, RESULTS_HEADER};
use crate::LabError;

pub const REPORT: &str = "report.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub manifold: String,
    pub param_name: String,
    pub param_value: f64,
    pub value: f64,
    pub reference: Option<f64>,
    pub abs_err: Option<f64>,
    /// `abs_err` of the previous point in the series over this one.
    pub ratio: Option<f64>,
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("not a number: {s:?}"))
    }
}

pub fn load(dir: &Path) -> Result<Vec<ReportRow>, LabError> {
    let path = dir.join(RESULTS);
    if !path.is_file() {
        return Err(LabError::Io(format!("{} does not exist", path.display())));
    }
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| LabError::Io(e.to_string()))?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(LabError::Io(format!("{}: unexpected header", path.display())));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        let bad = |msg: String| LabError::Io(format!("{} line {}: {msg}", path.display(), i + 2));
        let num = |j: usize| -> Result<f64, LabError> { rec[j].parse().map_err(|_| bad(format!("column {} is not a number", RESULTS_HEADER[j]))) };
        let mut row = ReportRow {
            experiment: rec[0].to_string(),
            manifold: rec[1].to_string(),
            param_name: rec[2].to_string(),
            param_value: num(3)?,
            value: num(4)?,
            reference: parse_opt(&rec[5]).map_err(bad)?,
            abs_err: parse_opt(&rec[6]).map_err(bad)?,
            ratio: None,
        };
        if let Some(prev) = rows
            .iter()
            .rev()
            .find(|p| p.experiment == row.experiment && p.param_name == row.param_name)
        {
            row.ratio = match (prev.abs_err, row.abs_err) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(LabError::Io(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// Plain-text tables, one per (experiment, parameter) series.
pub fn render_text(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let mut series: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let key = (r.experiment.as_str(), r.manifold.as_str(), r.param_name.as_str());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    for (exp, man, param) in series {
        let _ = writeln!(out, "{exp} on {man}: {param}");
        let _ = writeln!(out, "  {:>12} {:>14} {:>14} {:>12} {:>8}", "param", "value", "reference", "abs_err", "ratio");
        for r in rows.iter().filter(|r| r.experiment == exp && r.param_name == param) {
            let cell = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "  {:>12} {:>14.6e} {:>14} {:>12} {:>8}",
                fmt_f64(r.param_value),
                r.value,
                cell(r.reference),
                r.abs_err.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into()),
                r.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()),
            );
        }
        out.push('\n');
    }
    out
}

pub fn render_csv(rows: &[ReportRow]) -> Result<Vec<u8>, LabError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| LabError::Io(format!("csv: {e}"));
    w.write_record(["experiment", "manifold", "param_name", "param_value", "value", "reference", "abs_err", "ratio"])
        .map_err(fail)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.manifold.clone(),
            r.param_name.clone(),
            fmt_f64(r.param_value),
            fmt_f64(r.value),
            opt(r.reference),
            opt(r.abs_err),
            opt(r.ratio),
        ])
        .map_err(fail)?;
    }
    w.into_inner().map_err(|e| LabError::Io(format!("csv: {e}")))
}

/// Reads `dir/results.csv`, writes `dir/report.csv` and returns the text table.
pub fn report(dir: &Path) -> Result<String, LabError> {
    let rows = load(dir)?;
    let bytes = render_csv(&rows)?;
    let path = dir.join(REPORT);
    fs::write(&path, bytes).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    Ok(render_text(&rows))
}
