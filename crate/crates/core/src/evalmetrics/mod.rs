//! Retrieval quality: hit-rate accuracy@k, MRR@10, and relative impact
//! against a baseline, plus TREC qrels/run I/O and table-shaped reports.

mod trec;

pub use trec::{parse_qrels, parse_run, read_qrels, read_run, run_to_trec, write_run};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{Hit, RankedRun};

/// Depths reported by default.
pub const DEFAULT_DEPTHS: [usize; 3] = [20, 100, 200];

/// Relevant documents per query. Queries whose judgments are all
/// non-relevant are absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>) {
        self.map.entry(query_id.into()).or_default().insert(doc_id.into());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.map.iter().map(|(q, d)| (q.as_str(), d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Every run query must have judgments.
    #[default]
    Strict,
    /// Unjudged queries are skipped and counted.
    Lenient,
}

struct Judged<'a> {
    pairs: Vec<(&'a [Hit], &'a BTreeSet<String>)>,
    skipped: usize,
}

fn judged<'a>(run: &'a RankedRun, qrels: &'a Qrels, mode: EvalMode) -> Result<Judged<'a>> {
    let mut pairs = Vec::with_capacity(run.len());
    let mut skipped = 0;
    for (qid, hits) in run.iter() {
        match (qrels.relevant(qid), mode) {
            (Some(rel), _) => pairs.push((hits, rel)),
            (None, EvalMode::Lenient) => skipped += 1,
            (None, EvalMode::Strict) => {
                return Err(Error::invalid(format!("query '{qid}' has no relevance judgments")))
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no judged queries to evaluate"));
    }
    Ok(Judged { pairs, skipped })
}

/// 1-based rank of the first relevant hit.
fn first_hit(hits: &[Hit], rel: &BTreeSet<String>) -> Option<usize> {
    hits.iter().position(|h| rel.contains(&h.doc_id)).map(|p| p + 1)
}

fn hit_rate(j: &Judged<'_>, k: usize) -> f64 {
    let hits = j
        .pairs
        .iter()
        .filter(|(h, rel)| first_hit(h, rel).is_some_and(|r| r <= k))
        .count();
    hits as f64 / j.pairs.len() as f64
}

fn mrr(j: &Judged<'_>, cutoff: usize) -> f64 {
    let sum: f64 = j
        .pairs
        .iter()
        .map(|(h, rel)| match first_hit(h, rel) {
            Some(r) if r <= cutoff => 1.0 / r as f64,
            _ => 0.0,
        })
        .sum();
    sum / j.pairs.len() as f64
}

/// Fraction of queries with at least one relevant document in the top `k`.
pub fn accuracy_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(hit_rate(&judged(run, qrels, EvalMode::Strict)?, k))
}

/// Mean reciprocal rank of the first relevant document, zero past rank 10.
pub fn mrr_at_10(run: &RankedRun, qrels: &Qrels) -> Result<f64> {
    Ok(mrr(&judged(run, qrels, EvalMode::Strict)?, 10))
}

/// `100 × (candidate / baseline − 1)`, rounded to two decimals.
pub fn relative_impact(candidate: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid(format!("baseline must be positive, got {baseline}")));
    }
    Ok(round2(100.0 * (candidate / baseline - 1.0)))
}

pub(crate) fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `-0.58%` style.
pub fn format_percent(x: f64) -> String {
    format!("{:.2}%", round2(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Hit rate per depth, ascending depth.
    pub accuracy: BTreeMap<usize, f64>,
    pub mrr_at_10: f64,
    pub num_queries: usize,
    pub skipped: usize,
}

impl MetricReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.accuracy.get(&k).copied()
    }

    /// Signed percent change per depth, then for MRR@10.
    pub fn impact_vs(&self, baseline: &MetricReport) -> Result<Impact> {
        let mut accuracy = BTreeMap::new();
        for (k, v) in &self.accuracy {
            let base = baseline
                .accuracy_at(*k)
                .ok_or_else(|| Error::invalid(format!("baseline lacks accuracy@{k}")))?;
            accuracy.insert(*k, relative_impact(*v, base)?);
        }
        Ok(Impact {
            accuracy,
            mrr_at_10: relative_impact(self.mrr_at_10, baseline.mrr_at_10)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub accuracy: BTreeMap<usize, f64>,
    pub mrr_at_10: f64,
}

/// Accuracy at each depth plus MRR@10.
pub fn evaluate(run: &RankedRun, qrels: &Qrels, depths: &[usize], mode: EvalMode) -> Result<MetricReport> {
    if depths.contains(&0) {
        return Err(Error::invalid("depths must be positive"));
    }
    let j = judged(run, qrels, mode)?;
    Ok(MetricReport {
        accuracy: depths.iter().map(|k| (*k, hit_rate(&j, *k))).collect(),
        mrr_at_10: mrr(&j, 10),
        num_queries: j.pairs.len(),
        skipped: j.skipped,
    })
}

/// One model row of a quality table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub model: String,
    pub tied: bool,
    /// Fraction of zero weights, e.g. 0.9.
    pub sparsity: f64,
    pub block_sparsity: bool,
    pub metrics: MetricReport,
    /// Against the row's baseline; `None` prints `0.00%`.
    pub impact: Option<Impact>,
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// `Model,Tied,Sparsity,Block-Sparsity`, then `Accuracy@k,Impact` per depth,
/// then `MRR@10,Impact`. Accuracies are percentages to two decimals.
pub fn quality_csv(rows: &[QualityRow]) -> String {
    let depths: Vec<usize> = rows
        .first()
        .map(|r| r.metrics.accuracy.keys().copied().collect())
        .unwrap_or_else(|| DEFAULT_DEPTHS.to_vec());
    let mut out = String::from("Model,Tied,Sparsity,Block-Sparsity");
    for k in &depths {
        let _ = write!(out, ",Accuracy@{k},Impact");
    }
    out.push_str(",MRR@10,Impact\n");
    for r in rows {
        let _ = write!(
            out,
            "{},{},{}%,{}",
            r.model,
            yes_no(r.tied),
            (r.sparsity * 100.0).round(),
            yes_no(r.block_sparsity)
        );
        for k in &depths {
            let acc = r.metrics.accuracy_at(*k).unwrap_or(f64::NAN);
            let imp = r.impact.as_ref().and_then(|i| i.accuracy.get(k).copied()).unwrap_or(0.0);
            let _ = write!(out, ",{:.2},{}", acc * 100.0, format_percent(imp));
        }
        let imp = r.impact.as_ref().map_or(0.0, |i| i.mrr_at_10);
        let _ = writeln!(out, ",{:.2},{}", r.metrics.mrr_at_10 * 100.0, format_percent(imp));
    }
    out
}
