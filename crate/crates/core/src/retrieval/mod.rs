//! BM25 first stage, TREC-style files, and candidate-set assembly.

mod io;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

pub use io::{
    format_qrels, format_run, parse_corpus_jsonl, parse_corpus_tsv, parse_qrels, parse_queries, parse_run, read_corpus,
    read_qrels, read_queries, read_run, write_corpus_tsv, write_qrels, write_queries, write_run,
    Document, Query, QrelRecord, RunRecord,
};

use crate::error::{Error, Result};
use crate::model::{Candidate, CandidateSet};
use crate::textproc::terms;

pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

const INDEX_MAGIC: &str = "setrank-index 1";

/// In-memory inverted index. Documents are stored sorted by id, so posting
/// lists ordered by document index are ordered by id as well.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    docs: Vec<Document>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

/// Text that is indexed for a document.
fn doc_terms(doc: &Document) -> Vec<String> {
    let mut t = terms(&doc.title);
    t.extend(terms(&doc.text));
    t
}

/// Non-negative idf: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn bm25_idf(doc_count: usize, df: usize) -> f64 {
    (1.0 + (doc_count as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// Per-term contribution with saturation `k1` and length normalization `b`.
pub fn bm25_term(tf: f64, doc_len: f64, avg_len: f64, idf: f64, k1: f64, b: f64) -> f64 {
    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avg_len))
}

/// Distinct query terms, sorted; repeated query terms count once.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut t = terms(query);
    t.sort();
    t.dedup();
    t
}

impl InvertedIndex {
    pub fn build(corpus: &[Document]) -> Result<Self> {
        let mut docs = corpus.to_vec();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateDoc(w[0].id.clone()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let t = doc_terms(doc);
            doc_lengths.push(t.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for term in t {
                *tf.entry(term).or_default() += 1;
            }
            for (term, f) in tf {
                postings.entry(term).or_default().push((i as u32, f));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Ok(Self { docs, postings, doc_lengths, avg_doc_length })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    /// `(doc_id, term_frequency)` pairs for `term`, sorted by doc id.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|&(d, f)| (self.docs[d as usize].id.as_str(), f)).collect())
            .unwrap_or_default()
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.position(doc_id).map(|i| self.doc_lengths[i])
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.position(doc_id).map(|i| &self.docs[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    fn position(&self, doc_id: &str) -> Option<usize> {
        self.docs.binary_search_by(|d| d.id.as_str().cmp(doc_id)).ok()
    }

    /// Top `k` documents by BM25, ties by doc id ascending. Documents that
    /// match no query term score 0 and still fill the list.
    pub fn search(&self, query: &str, k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
        let n = self.docs.len();
        let mut scores = vec![0.0f64; n];
        for term in query_terms(query) {
            let Some(list) = self.postings.get(&term) else { continue };
            let idf = bm25_idf(n, list.len());
            for &(d, tf) in list {
                let d = d as usize;
                scores[d] +=
                    bm25_term(tf as f64, self.doc_lengths[d] as f64, self.avg_doc_length, idf, k1, b);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        // documents are id-sorted, so index order breaks ties by id
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.into_iter().take(k).map(|d| (self.docs[d].id.clone(), scores[d])).collect()
    }

    /// Searches every query and writes the results as run records.
    pub fn search_run(&self, queries: &[Query], k: usize, k1: f64, b: f64, tag: &str) -> Vec<RunRecord> {
        queries
            .iter()
            .flat_map(|q| {
                self.search(&q.text, k, k1, b).into_iter().enumerate().map(|(r, (doc_id, score))| RunRecord {
                    query_id: q.id.clone(),
                    doc_id,
                    rank: r + 1,
                    score,
                    tag: tag.to_string(),
                })
            })
            .collect()
    }
}

impl InvertedIndex {
    /// Text form: a magic line, the document count, one JSON object per
    /// document, then one `term<TAB>doc:tf doc:tf ...` line per term.
    pub fn to_text(&self) -> String {
        let mut s = format!("{INDEX_MAGIC}\n{}\n", self.docs.len());
        for (d, len) in self.docs.iter().zip(&self.doc_lengths) {
            let obj = serde_json::json!({ "id": d.id, "title": d.title, "text": d.text, "len": len });
            writeln!(s, "{obj}").unwrap();
        }
        for (term, list) in &self.postings {
            let entries: Vec<String> = list.iter().map(|(d, f)| format!("{d}:{f}")).collect();
            writeln!(s, "{term}\t{}", entries.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(source, 0, format!("missing {what}")));
        let (_, magic) = next("header")?;
        if magic != INDEX_MAGIC {
            return Err(Error::parse(source, 1, format!("expected `{INDEX_MAGIC}`")));
        }
        let (_, count) = next("document count")?;
        let count: usize = count.trim().parse().map_err(|_| Error::parse(source, 2, "bad document count"))?;
        let mut docs = Vec::with_capacity(count);
        let mut doc_lengths = Vec::with_capacity(count);
        for _ in 0..count {
            let (i, line) = next("document")?;
            let err = |m: &str| Error::parse(source, i + 1, m);
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
            let field = |k: &str| v.get(k).and_then(|x| x.as_str()).map(String::from).ok_or_else(|| err(k));
            docs.push(Document { id: field("id")?, title: field("title")?, text: field("text")? });
            doc_lengths.push(v.get("len").and_then(|x| x.as_u64()).ok_or_else(|| err("len"))? as u32);
        }
        if docs.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::parse(source, 3, "documents not sorted by unique id"));
        }
        let mut postings = BTreeMap::new();
        for (i, line) in lines {
            let err = |m: String| Error::parse(source, i + 1, m);
            let (term, rest) = line.split_once('\t').ok_or_else(|| err("expected term<TAB>postings".into()))?;
            let list = rest
                .split(' ')
                .map(|e| {
                    let (d, f) = e.split_once(':').ok_or_else(|| err(format!("bad posting {e}")))?;
                    let d: u32 = d.parse().map_err(|_| err(format!("bad posting {e}")))?;
                    let f: u32 = f.parse().map_err(|_| err(format!("bad posting {e}")))?;
                    if d as usize >= count {
                        return Err(err(format!("document index {d} out of range")));
                    }
                    Ok((d, f))
                })
                .collect::<Result<Vec<_>>>()?;
            postings.insert(term.to_string(), list);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if count == 0 { 0.0 } else { total as f64 / count as f64 };
        Ok(Self { docs, postings, doc_lengths, avg_doc_length })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Top `n` run entries per query, joined with document and query text.
///
/// Sets come out in the order queries first appear in `run`.
pub fn assemble_candidate_sets(
    run: &[RunRecord],
    corpus: &[Document],
    queries: &[Query],
    n: usize,
) -> Result<Vec<CandidateSet>> {
    let docs: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let texts: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<&RunRecord>> = HashMap::new();
    for r in run {
        grouped
            .entry(r.query_id.as_str())
            .or_insert_with(|| {
                order.push(r.query_id.as_str());
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|qid| {
            let mut recs = grouped.remove(qid).unwrap_or_default();
            recs.sort_by_key(|r| r.rank);
            let query_text =
                texts.get(qid).ok_or_else(|| Error::InvalidArgument(format!("no text for query {qid}")))?;
            let candidates = recs
                .into_iter()
                .take(n)
                .map(|r| {
                    let d = docs.get(r.doc_id.as_str()).ok_or_else(|| Error::MissingDoc(r.doc_id.clone()))?;
                    Ok(Candidate {
                        doc_id: r.doc_id.clone(),
                        title: d.title.clone(),
                        passage: d.text.clone(),
                        retrieval_score: r.score,
                        first_stage_rank: r.rank,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let set = CandidateSet { query_id: qid.to_string(), query_text: query_text.to_string(), candidates };
            set.validate()?;
            Ok(set)
        })
        .collect()
}
