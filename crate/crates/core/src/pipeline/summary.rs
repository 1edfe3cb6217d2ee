//! Throughput-versus-quality summary: accuracy@100 per dataset, QPS and
//! speedup per model, plus the relative-accuracy figure series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchharness::{parse_report_csv, speedup, FigurePoint};
use crate::error::{Error, Result};
use crate::evalmetrics::MetricReport;

/// Depth reported in the summary.
pub const SUMMARY_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    /// Accuracy@100 in percent, one entry per dataset in column order.
    pub accuracy: Vec<f64>,
    pub qps: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub datasets: Vec<String>,
    pub rows: Vec<SummaryRow>,
    /// Index of the row speedups are measured against.
    pub baseline: usize,
}

/// One model's inputs: accuracy@100 percent per dataset and its QPS.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryInput {
    pub model: String,
    pub accuracy: BTreeMap<String, f64>,
    pub qps: f64,
}

impl Summary {
    pub fn build(datasets: Vec<String>, inputs: &[SummaryInput], baseline: usize) -> Result<Self> {
        let base = inputs
            .get(baseline)
            .ok_or_else(|| Error::invalid(format!("baseline row {baseline} of {}", inputs.len())))?;
        let mut rows = Vec::with_capacity(inputs.len());
        for m in inputs {
            let accuracy = datasets
                .iter()
                .map(|d| {
                    m.accuracy
                        .get(d)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("model '{}' has no accuracy for '{d}'", m.model)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(SummaryRow {
                model: m.model.clone(),
                accuracy,
                qps: m.qps,
                speedup: speedup(m.qps, base.qps)?,
            });
        }
        Ok(Self { datasets, rows, baseline })
    }

    /// `Model,<dataset>...,QPS,Speedup`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Model");
        for d in &self.datasets {
            let _ = write!(out, ",{d}");
        }
        out.push_str(",QPS,Speedup\n");
        for r in &self.rows {
            out.push_str(&r.model);
            for a in &r.accuracy {
                let _ = write!(out, ",{a:.2}%");
            }
            let _ = writeln!(out, ",{:.3},{:.2}", r.qps, r.speedup);
        }
        out
    }

    /// One series per dataset, accuracy relative to the baseline row.
    pub fn figure_points(&self) -> Vec<FigurePoint> {
        let base = &self.rows[self.baseline];
        let mut out = Vec::new();
        for (d, name) in self.datasets.iter().enumerate() {
            for r in &self.rows {
                out.push(FigurePoint {
                    series: name.clone(),
                    label: r.model.clone(),
                    qps: r.qps,
                    accuracy: r.accuracy[d],
                    baseline_accuracy: base.accuracy[d],
                });
            }
        }
        out
    }
}

/// A number given inline or read from a file another command wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Value(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub name: String,
    /// Percent, or a metrics JSON file written by `eval`.
    pub accuracy: BTreeMap<String, Source>,
    /// Items/sec, or a benchmark report (CSV or JSON) written by `bench`.
    pub qps: Source,
}

/// Input of the `report` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub datasets: Vec<String>,
    pub models: Vec<ReportModel>,
    /// Name of the speedup baseline; the first model when absent.
    #[serde(default)]
    pub baseline: Option<String>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Accuracy@100 from a metrics JSON file, in percent.
pub fn accuracy_from_metrics(path: &Path) -> Result<f64> {
    let report: MetricReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    report
        .accuracy_at(SUMMARY_DEPTH)
        .map(|a| a * 100.0)
        .ok_or_else(|| Error::invalid(format!("{} has no accuracy@{SUMMARY_DEPTH}", path.display())))
}

/// Average items/sec from a benchmark report.
pub fn qps_from_report(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        return v["rows"]
            .as_array()
            .and_then(|rows| rows.iter().find(|r| r["Run"] == "average"))
            .and_then(|r| r["items/sec"].as_f64())
            .ok_or_else(|| Error::invalid(format!("{} has no average items/sec", path.display())));
    }
    let (_, agg) = parse_report_csv(&text)?;
    Ok(agg.average[0])
}

impl ReportSpec {
    /// Reads every referenced file, resolving relative paths against `base`.
    pub fn summarize(&self, base: &Path) -> Result<Summary> {
        let mut inputs = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let mut accuracy = BTreeMap::new();
            for (d, src) in &m.accuracy {
                let v = match src {
                    Source::Value(v) => *v,
                    Source::File(p) => accuracy_from_metrics(&resolve(base, p))?,
                };
                accuracy.insert(d.clone(), v);
            }
            let qps = match &m.qps {
                Source::Value(v) => *v,
                Source::File(p) => qps_from_report(&resolve(base, p))?,
            };
            inputs.push(SummaryInput {
                model: m.name.clone(),
                accuracy,
                qps,
            });
        }
        let baseline = match &self.baseline {
            None => 0,
            Some(name) => self
                .models
                .iter()
                .position(|m| &m.name == name)
                .ok_or_else(|| Error::invalid(format!("baseline '{name}' is not a listed model")))?,
        };
        Summary::build(self.datasets.clone(), &inputs, baseline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ReportSpec {
        serde_json::from_str(
            r#"{"datasets": ["MSMARCO", "NQ"],
                "models": [
                  {"name": "dense", "accuracy": {"MSMARCO": 69.80, "NQ": 86.34}, "qps": 47.278},
                  {"name": "sparse", "accuracy": {"MSMARCO": 70.04, "NQ": 85.84}, "qps": 202.67}
                ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn inline_values() {
        let s = spec().summarize(Path::new(".")).unwrap();
        assert_eq!(
            s.to_csv(),
            "Model,MSMARCO,NQ,QPS,Speedup\ndense,69.80%,86.34%,47.278,1.00\nsparse,70.04%,85.84%,202.670,4.29\n"
        );
        let pts = s.figure_points();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].baseline_accuracy, 69.80);
        assert_eq!(pts[3].series, "NQ");
    }

    #[test]
    fn baseline_by_name_and_missing_cells() {
        let mut sp = spec();
        sp.baseline = Some("sparse".into());
        let s = sp.summarize(Path::new(".")).unwrap();
        assert_eq!(s.rows[1].speedup, 1.0);
        sp.baseline = Some("nope".into());
        assert!(sp.summarize(Path::new(".")).is_err());
        let mut sp = spec();
        sp.models[1].accuracy.remove("NQ");
        assert!(sp.summarize(Path::new(".")).is_err());
    }

    #[test]
    fn file_sources() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = MetricReport {
            accuracy: [(20, 0.5), (100, 0.75), (200, 0.8)].into_iter().collect(),
            mrr_at_10: 0.3,
            num_queries: 4,
            skipped: 0,
        };
        std::fs::write(dir.path().join("m.json"), serde_json::to_string(&metrics).unwrap()).unwrap();
        let runs = vec![crate::benchharness::RunStats::from_latencies(&[0.01, 0.01], 0.02).unwrap()];
        crate::benchharness::emit_report(&runs, dir.path().join("b.csv"), crate::benchharness::ReportFormat::Csv).unwrap();
        crate::benchharness::emit_report(&runs, dir.path().join("b.json"), crate::benchharness::ReportFormat::Json).unwrap();
        let sp: ReportSpec = serde_json::from_str(
            r#"{"datasets": ["x"], "models": [
                {"name": "a", "accuracy": {"x": "m.json"}, "qps": "b.csv"},
                {"name": "b", "accuracy": {"x": 70.0}, "qps": "b.json"}]}"#,
        )
        .unwrap();
        let s = sp.summarize(dir.path()).unwrap();
        assert_eq!(s.rows[0].accuracy, vec![75.0]);
        assert!((s.rows[0].qps - 100.0).abs() < 1e-9);
        assert!((s.rows[1].qps - 100.0).abs() < 1e-9);
    }
}
