//! Line-oriented dataset files: JSONL corpus and training data, TSV queries,
//! TREC qrels.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::biencoder::TrainExample;
use crate::error::{Error, Result};
use crate::evalmetrics::{parse_qrels, Qrels};
use crate::retrieval::{Corpus, Document, Query};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    String::from_utf8(bytes).map_err(|e| {
        let line = 1 + e.as_bytes()[..e.utf8_error().valid_up_to()].iter().filter(|b| **b == b'\n').count();
        parse_err(path, line, "invalid UTF-8")
    })
}

/// Non-blank lines with 1-based numbers, `\r\n` treated as `\n`.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Remembers the line of each id and reports the first repeat.
struct Seen<'a> {
    path: &'a Path,
    what: &'static str,
    lines: HashMap<String, usize>,
}

impl<'a> Seen<'a> {
    fn new(path: &'a Path, what: &'static str) -> Self {
        Self {
            path,
            what,
            lines: HashMap::new(),
        }
    }

    fn insert(&mut self, id: &str, line: usize) -> Result<()> {
        if id.is_empty() {
            return Err(parse_err(self.path, line, format!("empty {}", self.what)));
        }
        if let Some(first) = self.lines.insert(id.to_string(), line) {
            return Err(parse_err(
                self.path,
                line,
                format!("duplicate {} '{id}' (first on line {first}, again on line {line})", self.what),
            ));
        }
        Ok(())
    }
}

fn warn_if_empty(path: &Path, n: usize) {
    if n == 0 {
        log::warn!("{} holds no records", path.display());
    }
}

/// JSONL, one `{"docid": .., "text": ..}` per line.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut seen = Seen::new(path, "docid");
    let mut docs = Vec::new();
    for (n, line) in lines(text) {
        let d: Document = serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
        seen.insert(&d.doc_id, n)?;
        docs.push(d);
    }
    warn_if_empty(path, docs.len());
    Corpus::new(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    parse_corpus(&read_text(path)?, path)
}

/// TSV `qid<TAB>text`; the text may be empty but the tab is required.
pub fn parse_queries(text: &str, path: &Path) -> Result<Vec<Query>> {
    let mut seen = Seen::new(path, "query id");
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let (qid, q) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected 'qid<TAB>text'"))?;
        seen.insert(qid, n)?;
        out.push(Query {
            query_id: qid.to_string(),
            text: q.to_string(),
        });
    }
    warn_if_empty(path, out.len());
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries(&read_text(path)?, path)
}

/// TREC qrels with repeated `(qid, docid)` pairs rejected.
pub fn parse_qrels_checked(text: &str, path: &Path) -> Result<Qrels> {
    let mut seen = Seen::new(path, "judgment");
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() == 4 {
            seen.insert(&format!("{} {}", f[0], f[2]), n)?;
        }
    }
    let qrels = parse_qrels(text, path)?;
    warn_if_empty(path, seen.lines.len());
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels_checked(&read_text(path)?, path)
}

/// JSONL, one `{"query", "positive", "negatives"}` per line.
pub fn parse_train(text: &str, path: &Path) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        out.push(serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?);
    }
    warn_if_empty(path, out.len());
    Ok(out)
}

pub fn load_train(path: impl AsRef<Path>) -> Result<Vec<TrainExample>> {
    let path = path.as_ref();
    parse_train(&read_text(path)?, path)
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    std::fs::write(path, jsonl(corpus.documents())?)?;
    Ok(())
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        if q.query_id.contains(['\t', '\n']) || q.text.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("query '{}' contains a tab or newline", q.query_id)));
        }
        let _ = writeln!(out, "{}\t{}", q.query_id, q.text);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn qrels_to_trec(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, docs) in qrels.iter() {
        for d in docs {
            let _ = writeln!(out, "{qid} 0 {d} 1");
        }
    }
    out
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    std::fs::write(path, qrels_to_trec(qrels))?;
    Ok(())
}

pub fn write_train(path: impl AsRef<Path>, examples: &[TrainExample]) -> Result<()> {
    std::fs::write(path, jsonl(examples)?)?;
    Ok(())
}
