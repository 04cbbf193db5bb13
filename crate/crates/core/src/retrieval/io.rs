use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One corpus entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// One line of a TREC run file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// One relevance judgment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QrelRecord {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

/// Parses `qid Q0 docid rank score tag` lines; blank lines are skipped.
pub fn parse_run(text: &str, source: &str) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(source, i + 1, m);
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        let rank = cols[3].parse().map_err(|_| err(format!("bad rank {}", cols[3])))?;
        let score: f64 = cols[4].parse().map_err(|_| err(format!("bad score {}", cols[4])))?;
        if !score.is_finite() {
            return Err(err(format!("non-finite score {}", cols[4])));
        }
        out.push(RunRecord {
            query_id: cols[0].into(),
            doc_id: cols[2].into(),
            rank,
            score,
            tag: cols[5].into(),
        });
    }
    Ok(out)
}

pub fn format_run(records: &[RunRecord]) -> String {
    let mut s = String::new();
    for r in records {
        writeln!(s, "{} Q0 {} {} {:.6} {}", r.query_id, r.doc_id, r.rank, r.score, r.tag).unwrap();
    }
    s
}

pub fn read_run(path: &Path) -> Result<Vec<RunRecord>> {
    parse_run(&read_text(path)?, &name(path))
}

pub fn write_run(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_text(path, &format_run(records))
}

/// Parses `qid 0 docid grade` lines.
pub fn parse_qrels(text: &str, source: &str) -> Result<Vec<QrelRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(source, i + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let grade = cols[3].parse().map_err(|_| Error::parse(source, i + 1, format!("bad grade {}", cols[3])))?;
        out.push(QrelRecord { query_id: cols[0].into(), doc_id: cols[2].into(), grade });
    }
    Ok(out)
}

pub fn format_qrels(records: &[QrelRecord]) -> String {
    let mut s = String::new();
    for r in records {
        writeln!(s, "{} 0 {} {}", r.query_id, r.doc_id, r.grade).unwrap();
    }
    s
}

pub fn read_qrels(path: &Path) -> Result<Vec<QrelRecord>> {
    parse_qrels(&read_text(path)?, &name(path))
}

pub fn write_qrels(path: &Path, records: &[QrelRecord]) -> Result<()> {
    write_text(path, &format_qrels(records))
}

/// `query_id<TAB>text` lines.
pub fn parse_queries(text: &str, source: &str) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| Error::parse(source, i + 1, "expected id<TAB>text"))?;
        out.push(Query { id: id.trim().into(), text: text.into() });
    }
    Ok(out)
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    parse_queries(&read_text(path)?, &name(path))
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let mut s = String::new();
    for q in queries {
        writeln!(s, "{}\t{}", q.id, q.text).unwrap();
    }
    write_text(path, &s)
}

/// `doc_id<TAB>title<TAB>passage` lines.
pub fn parse_corpus_tsv(text: &str, source: &str) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(source, i + 1, "expected doc_id<TAB>title<TAB>passage"));
        }
        out.push(Document { id: cols[0].into(), title: cols[1].into(), text: cols[2].into() });
    }
    Ok(out)
}

/// One JSON object per line with string fields `id`, `title`, `text`.
pub fn parse_corpus_jsonl(text: &str, source: &str) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        let field = |k: &str, required: bool| -> Result<String> {
            match v.get(k) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(serde_json::Value::Number(n)) if k == "id" => Ok(n.to_string()),
                None if !required => Ok(String::new()),
                _ => Err(Error::parse(source, i + 1, format!("missing string field {k}"))),
            }
        };
        out.push(Document { id: field("id", true)?, title: field("title", false)?, text: field("text", true)? });
    }
    Ok(out)
}

/// Reads JSONL for `.jsonl`/`.json` paths and TSV otherwise.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let text = read_text(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => parse_corpus_jsonl(&text, &name(path)),
        _ => parse_corpus_tsv(&text, &name(path)),
    }
}

pub fn write_corpus_tsv(path: &Path, docs: &[Document]) -> Result<()> {
    let mut s = String::new();
    for d in docs {
        writeln!(s, "{}\t{}\t{}", d.id, d.title, d.text).unwrap();
    }
    write_text(path, &s)
}
