use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{aggregate_columns, AggregateStats, Columns, RunStats, COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown report format '{other}' (csv|json)"))),
        }
    }
}

/// Two-decimal mantissa with a signed two-digit exponent: `2.06E-02`.
fn sci(v: f64) -> String {
    let s = format!("{v:.2E}");
    let (mantissa, exp) = s.split_once('E').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}E{sign}{:02}", exp.abs())
}

fn cell(col: usize, v: f64) -> String {
    if col < 2 {
        format!("{v:.3}")
    } else {
        sci(v)
    }
}

fn push_row(out: &mut String, label: &str, row: &Columns) {
    out.push_str(label);
    for (c, v) in row.iter().enumerate() {
        out.push(',');
        out.push_str(&cell(c, *v));
    }
    out.push('\n');
}

/// Header, `Run 1..n`, then average, stdev, CI, Lower, High.
pub fn report_csv(runs: &[Columns], agg: &AggregateStats) -> String {
    let mut out = String::from("Run");
    for c in COLUMNS {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for (i, r) in runs.iter().enumerate() {
        push_row(&mut out, &format!("Run {}", i + 1), r);
    }
    for (label, row) in agg.rows() {
        push_row(&mut out, label, row);
    }
    out
}

/// Rows in report order, each an object keyed by column name.
pub fn report_json(runs: &[Columns], agg: &AggregateStats) -> serde_json::Value {
    let row = |label: String, r: &Columns| {
        let mut m = serde_json::Map::new();
        m.insert("Run".into(), serde_json::Value::String(label));
        for (name, v) in COLUMNS.iter().zip(r) {
            m.insert((*name).into(), serde_json::json!(v));
        }
        serde_json::Value::Object(m)
    };
    let mut rows: Vec<serde_json::Value> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| row(format!("Run {}", i + 1), r))
        .collect();
    rows.extend(agg.rows().iter().map(|(l, r)| row(l.to_string(), r)));
    serde_json::json!({ "columns": COLUMNS, "rows": rows, "single_run": agg.single_run })
}

/// Aggregates `runs` and writes the report in `format`.
pub fn emit_report(runs: &[RunStats], path: impl AsRef<Path>, format: ReportFormat) -> Result<AggregateStats> {
    let cols: Vec<Columns> = runs.iter().map(RunStats::columns).collect();
    let agg = aggregate_columns(&cols)?;
    let body = match format {
        ReportFormat::Csv => report_csv(&cols, &agg),
        ReportFormat::Json => serde_json::to_string_pretty(&report_json(&cols, &agg))? + "\n",
    };
    std::fs::write(path, body)?;
    Ok(agg)
}

/// Inverse of [`report_csv`] up to formatting precision.
pub fn parse_report_csv(text: &str) -> Result<(Vec<Columns>, AggregateStats)> {
    let path = Path::new("<report>");
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty report".into()))?;
    let expected = std::iter::once("Run").chain(COLUMNS).collect::<Vec<_>>().join(",");
    if header != expected {
        return Err(err(1, format!("header '{header}' != '{expected}'")));
    }
    let mut runs = Vec::new();
    let mut derived: Vec<(String, Columns)> = Vec::new();
    for (n, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(err(n, format!("expected 9 fields, got {}", fields.len())));
        }
        let mut row = [0.0; 8];
        for (c, f) in fields[1..].iter().enumerate() {
            row[c] = f.parse().map_err(|_| err(n, format!("bad number '{f}'")))?;
        }
        if fields[0].starts_with("Run ") {
            runs.push(row);
        } else {
            derived.push((fields[0].to_string(), row));
        }
    }
    let labels: Vec<&str> = derived.iter().map(|(l, _)| l.as_str()).collect();
    if labels != ["average", "stdev", "CI", "Lower", "High"] {
        return Err(err(0, format!("derived rows {labels:?} out of order")));
    }
    let mut agg = aggregate_columns(&runs)?;
    agg.average = derived[0].1;
    agg.stdev = derived[1].1;
    agg.ci95 = derived[2].1;
    agg.lower = derived[3].1;
    agg.high = derived[4].1;
    Ok((runs, agg))
}

/// One model's throughput and quality on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub series: String,
    pub label: String,
    pub qps: f64,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub series: String,
    pub label: String,
    pub qps: f64,
    /// `100 × accuracy / baseline_accuracy`.
    pub relative_accuracy: f64,
}

pub fn figure_rows(points: &[FigurePoint]) -> Result<Vec<FigureRow>> {
    points
        .iter()
        .map(|p| {
            if !(p.baseline_accuracy > 0.0) {
                return Err(Error::invalid(format!("'{}' has a non-positive baseline accuracy", p.label)));
            }
            Ok(FigureRow {
                series: p.series.clone(),
                label: p.label.clone(),
                qps: p.qps,
                relative_accuracy: 100.0 * p.accuracy / p.baseline_accuracy,
            })
        })
        .collect()
}

/// `series,label,qps,relative_accuracy`, both numbers to two decimals.
pub fn figure_csv(rows: &[FigureRow]) -> String {
    let mut out = String::from("series,label,qps,relative_accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.2},{:.2}", r.series, r.label, r.qps, r.relative_accuracy);
    }
    out
}

pub fn emit_figure_data(points: &[FigurePoint], path: impl AsRef<Path>) -> Result<Vec<FigureRow>> {
    let rows = figure_rows(points)?;
    std::fs::write(path, figure_csv(&rows))?;
    Ok(rows)
}
