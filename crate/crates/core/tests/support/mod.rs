//! Reference implementations written directly from the metric, BM25 and
//! cosine definitions, shared by the oracle tests and the acceptance run.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use setrank::retrieval::{Document, QrelRecord, RunRecord};
use setrank::textproc::terms;

/// One query: documents in ranked order with their grades, plus the grades
/// of judged documents that were not retrieved.
#[derive(Clone, Debug)]
pub struct Instance {
    pub ranked: Vec<(String, u32)>,
    pub unretrieved: Vec<u32>,
}

impl Instance {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let n = rng.random_range(1..=20);
        let ranked = (0..n).map(|i| (format!("d{i}"), rng.random_range(0..=3))).collect();
        let unretrieved = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..=3)).collect();
        Self { ranked, unretrieved }
    }

    /// Run and qrels for query `q`; retrieved docs with grade 0 are judged
    /// only half the time so unjudged documents appear too.
    pub fn records<R: Rng>(&self, q: &str, rng: &mut R) -> (Vec<RunRecord>, Vec<QrelRecord>) {
        let n = self.ranked.len();
        let run = self
            .ranked
            .iter()
            .enumerate()
            .map(|(i, (d, _))| RunRecord {
                query_id: q.into(),
                doc_id: d.clone(),
                rank: i + 1,
                score: (n - i) as f64,
                tag: "t".into(),
            })
            .collect();
        let mut qrels: Vec<QrelRecord> = self
            .ranked
            .iter()
            .filter(|(_, g)| *g > 0 || rng.random_bool(0.5))
            .map(|(d, g)| QrelRecord { query_id: q.into(), doc_id: d.clone(), grade: *g })
            .collect();
        for (j, &g) in self.unretrieved.iter().enumerate() {
            qrels.push(QrelRecord { query_id: q.into(), doc_id: format!("x{j}"), grade: g });
        }
        if qrels.is_empty() {
            qrels.push(QrelRecord { query_id: q.into(), doc_id: "x-none".into(), grade: 0 });
        }
        (run, qrels)
    }

    fn grades(&self) -> impl Iterator<Item = u32> + '_ {
        self.ranked.iter().map(|(_, g)| *g)
    }

    pub fn reciprocal_rank(&self, k: usize, threshold: u32) -> f64 {
        for (i, g) in self.grades().enumerate() {
            if i >= k {
                break;
            }
            if g >= threshold {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    }

    pub fn average_precision(&self, threshold: u32) -> f64 {
        let total = self.grades().chain(self.unretrieved.iter().copied()).filter(|&g| g >= threshold).count();
        if total == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for (i, g) in self.grades().enumerate() {
            if g >= threshold {
                // precision at this cutoff, counted from scratch
                let hits = self.grades().take(i + 1).filter(|&h| h >= threshold).count();
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        sum / total as f64
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        let dcg = |grades: &[u32]| -> f64 {
            grades.iter().take(k).enumerate().map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2()).sum()
        };
        let mut ideal: Vec<u32> = self.grades().chain(self.unretrieved.iter().copied()).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(&ideal);
        if idcg == 0.0 {
            return 0.0;
        }
        dcg(&self.grades().collect::<Vec<_>>()) / idcg
    }
}

/// BM25 by scanning every document: document frequencies and lengths are
/// recounted for each call.
pub fn bm25_scan(corpus: &[Document], query: &str, k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<(String, Vec<String>)> = corpus
        .iter()
        .map(|d| {
            let mut t = terms(&d.title);
            t.extend(terms(&d.text));
            (d.id.clone(), t)
        })
        .collect();
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avg = total as f64 / n;
    let qterms: BTreeSet<String> = terms(query).into_iter().collect();
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, t)| {
            let mut s = 0.0;
            for q in &qterms {
                let df = docs.iter().filter(|(_, other)| other.contains(q)).count() as f64;
                if df == 0.0 {
                    continue;
                }
                let tf = t.iter().filter(|w| *w == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * t.len() as f64 / avg));
            }
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn random_corpus<R: Rng>(rng: &mut R, words: &[&str], max_docs: usize) -> Vec<Document> {
    let n = rng.random_range(1..=max_docs);
    let mut phrase = |max: usize| -> String {
        let len = rng.random_range(0..=max);
        (0..len).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    (0..n).map(|i| Document { id: format!("doc{i:03}"), title: phrase(2), text: phrase(12) }).collect()
}

/// Cosine similarity by the textbook formula.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Dataset where feature 0 ranks the single relevant candidate of every
/// query first and feature 1 is noise, as (per-feature runs, qrels).
pub fn perfect_and_noise<R: Rng>(rng: &mut R, queries: usize, n: usize) -> (Vec<RunRecord>, Vec<RunRecord>, Vec<QrelRecord>) {
    let mut perfect = Vec::new();
    let mut noise = Vec::new();
    let mut qrels = Vec::new();
    for q in 0..queries {
        let qid = format!("q{q}");
        let rel = rng.random_range(0..n);
        let mut f0: Vec<(String, f64)> = Vec::new();
        let mut f1: Vec<(String, f64)> = Vec::new();
        for d in 0..n {
            let id = format!("q{q}d{d}");
            let s0 = if d == rel { 10.0 + rng.random::<f64>() } else { rng.random::<f64>() * 10.0 };
            f0.push((id.clone(), s0));
            f1.push((id.clone(), rng.random::<f64>() * 100.0));
            qrels.push(QrelRecord { query_id: qid.clone(), doc_id: id, grade: u32::from(d == rel) });
        }
        for (list, out) in [(f0, &mut perfect), (f1, &mut noise)] {
            let mut list = list;
            list.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (i, (id, s)) in list.into_iter().enumerate() {
                out.push(RunRecord { query_id: qid.clone(), doc_id: id, rank: i + 1, score: s, tag: "f".into() });
            }
        }
    }
    (perfect, noise, qrels)
}

/// MRR@10 of a run computed straight from the records.
pub fn run_mrr10(run: &[RunRecord], qrels: &[QrelRecord]) -> f64 {
    let rel: BTreeSet<(&str, &str)> =
        qrels.iter().filter(|r| r.grade >= 1).map(|r| (r.query_id.as_str(), r.doc_id.as_str())).collect();
    let mut by_q: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in run {
        by_q.entry(&r.query_id).or_default().push(r);
    }
    let sum: f64 = by_q
        .iter()
        .map(|(q, recs)| {
            let mut recs = recs.clone();
            recs.sort_by_key(|r| r.rank);
            recs.iter().take(10).position(|r| rel.contains(&(*q, r.doc_id.as_str()))).map_or(0.0, |p| 1.0 / (p + 1) as f64)
        })
        .sum();
    sum / by_q.len() as f64
}
