use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::retrieval::{Hit, RankedRun};

use super::Qrels;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based numbers, `\r\n` treated as `\n`.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// `qid 0 docid rel`; only `rel > 0` counts as relevant. `path` labels errors.
pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 fields 'qid 0 docid rel', got {}", f.len())));
        }
        let rel: i64 = f[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("relevance '{}' is not an integer", f[3])))?;
        if rel > 0 {
            qrels.insert(f[0], f[2]);
        }
    }
    Ok(qrels)
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels(&std::fs::read_to_string(path)?, path)
}

/// `qid Q0 docid rank score tag`, one line per hit, rank 1-based.
pub fn run_to_trec(run: &RankedRun, tag: &str) -> String {
    let mut out = String::new();
    for (qid, hits) in run.iter() {
        for (i, h) in hits.iter().enumerate() {
            let _ = writeln!(out, "{qid} Q0 {} {} {} {tag}", h.doc_id, i + 1, h.score);
        }
    }
    out
}

pub fn write_run(path: impl AsRef<Path>, run: &RankedRun, tag: &str) -> Result<()> {
    std::fs::write(path, run_to_trec(run, tag))?;
    Ok(())
}

/// Groups lines by query in first-appearance order and orders hits by rank.
pub fn parse_run(text: &str, path: &Path) -> Result<RankedRun> {
    let mut queries: Vec<(String, Vec<(usize, Hit, usize)>)> = Vec::new();
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(path, n, format!("expected 6 fields 'qid Q0 docid rank score tag', got {}", f.len())));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("rank '{}' is not a positive integer", f[3])))?;
        let score: f32 = f[4]
            .parse()
            .map_err(|_| parse_err(path, n, format!("score '{}' is not a number", f[4])))?;
        if rank == 0 || !score.is_finite() {
            return Err(parse_err(path, n, "rank must be ≥ 1 and score finite"));
        }
        let hit = Hit {
            doc_id: f[2].to_string(),
            score,
        };
        match queries.iter_mut().find(|(q, _)| q == f[0]) {
            Some((_, hits)) => hits.push((rank, hit, n)),
            None => queries.push((f[0].to_string(), vec![(rank, hit, n)])),
        }
    }
    let mut out = Vec::with_capacity(queries.len());
    for (qid, mut hits) in queries {
        hits.sort_by_key(|(rank, _, _)| *rank);
        for w in hits.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(parse_err(path, w[1].2, format!("rank {} repeated for query '{qid}'", w[1].0)));
            }
        }
        out.push((qid, hits.into_iter().map(|(_, h, _)| h).collect()));
    }
    RankedRun::new(out).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RankedRun> {
    let path: PathBuf = path.as_ref().to_path_buf();
    parse_run(&std::fs::read_to_string(&path)?, &path)
}
