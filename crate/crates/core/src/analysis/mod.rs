//! Statistics over recorded global attention and score distributions.
//!
//! Similarity between two candidates at a layer is the cosine of their
//! globally-attended `[CLS]` outputs. Per query and grade pair these are
//! averaged, then min-max normalized within each layer.

pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::Qrels;
use crate::model::GlobalTrace;
use crate::retrieval::RunRecord;
use crate::Scalar;

pub const ATTENTION_HEADER: &str = "query_id,layer,i,k,label_i,label_k,similarity";
pub const SUMMARY_HEADER: &str = "layer,R1,R2,mean,normalized";
pub const SCORES_HEADER: &str = "query_id,doc_id,grade,score";
pub const GRADE_SUMMARY_HEADER: &str = "grade,count,mean,q1,median,q3";

/// Cosine similarity; undefined when either vector is zero.
pub fn attention_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape { op: "attention_similarity", lhs: vec![a.len()], rhs: vec![b.len()] });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // rounding can push |cos| a hair past 1
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub query_id: String,
    pub layer: usize,
    pub i: usize,
    pub k: usize,
    pub label_i: u32,
    pub label_k: u32,
    pub similarity: f64,
}

/// Every ordered candidate pair, diagonal included, at each traced layer.
pub fn attention_records<T: Scalar>(
    query_id: &str,
    traces: &[GlobalTrace<T>],
    labels: &[u32],
) -> Result<Vec<AttentionRecord>> {
    let mut out = Vec::new();
    for t in traces {
        let n = t.attended.shape()[0];
        if n != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "query {query_id}: {} labels for {n} candidates",
                labels.len()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| t.attended.row(i).iter().map(|v| v.as_f64()).collect()).collect();
        // computed once per unordered pair so A[i][k] == A[k][i] exactly
        let mut sim = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in i..n {
                sim[i][k] = attention_similarity(&rows[i], &rows[k])?;
                sim[k][i] = sim[i][k];
            }
        }
        for i in 0..n {
            for k in 0..n {
                let similarity = sim[i][k];
                out.push(AttentionRecord {
                    query_id: query_id.to_string(),
                    layer: t.layer,
                    i,
                    k,
                    label_i: labels[i],
                    label_k: labels[k],
                    similarity,
                });
            }
        }
    }
    Ok(out)
}

/// Mean similarity over pairs `i != k` of `query` at `layer` labelled
/// `(r1, r2)` in either order; `None` when no pair qualifies.
pub fn label_pair_means(records: &[AttentionRecord], query: &str, layer: usize, r1: u32, r2: u32) -> Option<f64> {
    let (sum, count) = records
        .iter()
        .filter(|r| r.query_id == query && r.layer == layer && r.i != r.k)
        .filter(|r| (r.label_i, r.label_k) == (r1, r2) || (r.label_i, r.label_k) == (r2, r1))
        .fold((0.0, 0usize), |(s, c), r| (s + r.similarity, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Min-max to [0, 1]; a constant input maps to 0.5 throughout.
pub fn normalize_layer(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect()
}

/// One summary row: a layer and unordered grade pair, averaged over queries.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelPairSummary {
    pub layer: usize,
    pub r1: u32,
    pub r2: u32,
    /// Per-query means, keyed by query.
    pub per_query: BTreeMap<String, f64>,
    /// Per-query means after the per-layer min-max, same keys.
    pub normalized: BTreeMap<String, f64>,
}

impl LabelPairSummary {
    pub fn mean(&self) -> f64 {
        average(self.per_query.values())
    }

    pub fn normalized_mean(&self) -> f64 {
        average(self.normalized.values())
    }
}

fn average<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Per-query label-pair means for every layer and unordered grade pair
/// present, normalized within each layer across queries and pairs.
pub fn summarize_attention(records: &[AttentionRecord]) -> Vec<LabelPairSummary> {
    let mut layers: BTreeMap<usize, BTreeMap<(u32, u32), BTreeMap<String, f64>>> = BTreeMap::new();
    let mut keys: BTreeMap<(usize, String), Vec<(u32, u32)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.i != r.k) {
        let pair = (r.label_i.min(r.label_k), r.label_i.max(r.label_k));
        let e = keys.entry((r.layer, r.query_id.clone())).or_default();
        if !e.contains(&pair) {
            e.push(pair);
        }
    }
    for ((layer, query), pairs) in &keys {
        for &(a, b) in pairs {
            if let Some(m) = label_pair_means(records, query, *layer, a, b) {
                layers.entry(*layer).or_default().entry((a, b)).or_default().insert(query.clone(), m);
            }
        }
    }
    let mut out = Vec::new();
    for (layer, pairs) in layers {
        let flat: Vec<f64> = pairs.values().flat_map(|m| m.values().copied()).collect();
        let mut norm = normalize_layer(&flat).into_iter();
        for ((r1, r2), per_query) in pairs {
            let normalized = per_query.keys().map(|q| (q.clone(), norm.next().expect("same length"))).collect();
            out.push(LabelPairSummary { layer, r1, r2, per_query, normalized });
        }
    }
    out
}

pub fn attention_csv(records: &[AttentionRecord]) -> String {
    let mut s = format!("{ATTENTION_HEADER}\n");
    for r in records {
        writeln!(s, "{},{},{},{},{},{},{:?}", r.query_id, r.layer, r.i, r.k, r.label_i, r.label_k, r.similarity)
            .unwrap();
    }
    s
}

pub fn parse_attention_csv(text: &str, source: &str) -> Result<Vec<AttentionRecord>> {
    parse_rows(text, source, ATTENTION_HEADER, 7, |f, err| {
        Ok(AttentionRecord {
            query_id: f[0].to_string(),
            layer: f[1].parse().map_err(|_| err("layer"))?,
            i: f[2].parse().map_err(|_| err("i"))?,
            k: f[3].parse().map_err(|_| err("k"))?,
            label_i: f[4].parse().map_err(|_| err("label_i"))?,
            label_k: f[5].parse().map_err(|_| err("label_k"))?,
            similarity: f[6].parse().map_err(|_| err("similarity"))?,
        })
    })
}

pub fn summary_csv(summary: &[LabelPairSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in summary {
        writeln!(s, "{},{},{},{:.6},{:.6}", r.layer, r.r1, r.r2, r.mean(), r.normalized_mean()).unwrap();
    }
    s
}

/// A row of the summary CSV as read back.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub layer: usize,
    pub r1: u32,
    pub r2: u32,
    pub mean: f64,
    pub normalized: f64,
}

pub fn parse_summary_csv(text: &str, source: &str) -> Result<Vec<SummaryRow>> {
    parse_rows(text, source, SUMMARY_HEADER, 5, |f, err| {
        Ok(SummaryRow {
            layer: f[0].parse().map_err(|_| err("layer"))?,
            r1: f[1].parse().map_err(|_| err("R1"))?,
            r2: f[2].parse().map_err(|_| err("R2"))?,
            mean: f[3].parse().map_err(|_| err("mean"))?,
            normalized: f[4].parse().map_err(|_| err("normalized"))?,
        })
    })
}

fn parse_rows<R>(
    text: &str,
    source: &str,
    header: &str,
    width: usize,
    row: impl Fn(&[&str], &dyn Fn(&str) -> Error) -> Result<R>,
) -> Result<Vec<R>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(Error::Parse { source_name: source.into(), line: 1, message: format!("expected header {header}") })
        }
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let err = |what: &str| Error::Parse { source_name: source.into(), line: n + 1, message: format!("bad {what}") };
        if f.len() != width {
            return Err(err(&format!("row: {width} fields expected")));
        }
        out.push(row(&f, &err)?);
    }
    Ok(out)
}

/// One judged, scored document.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradeSummary {
    pub grade: u32,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linearly interpolated quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Run records that have a judgment, with their grade, plus per-grade
/// count, mean and quartiles.
pub fn export_score_distribution(run: &[RunRecord], qrels: &Qrels) -> (Vec<ScoreRow>, Vec<GradeSummary>) {
    let rows: Vec<ScoreRow> = run
        .iter()
        .filter_map(|r| {
            let grade = *qrels.judged(&r.query_id)?.get(&r.doc_id)?;
            Some(ScoreRow { query_id: r.query_id.clone(), doc_id: r.doc_id.clone(), grade, score: r.score })
        })
        .collect();
    let mut by_grade: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_grade.entry(r.grade).or_default().push(r.score);
    }
    let summary = by_grade
        .into_iter()
        .map(|(grade, mut v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.sort_by(f64::total_cmp);
            GradeSummary {
                grade,
                count: v.len(),
                mean,
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
            }
        })
        .collect();
    (rows, summary)
}

pub fn scores_csv(rows: &[ScoreRow]) -> String {
    let mut s = format!("{SCORES_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{:?}", r.query_id, r.doc_id, r.grade, r.score).unwrap();
    }
    s
}

pub fn parse_scores_csv(text: &str, source: &str) -> Result<Vec<ScoreRow>> {
    parse_rows(text, source, SCORES_HEADER, 4, |f, err| {
        Ok(ScoreRow {
            query_id: f[0].to_string(),
            doc_id: f[1].to_string(),
            grade: f[2].parse().map_err(|_| err("grade"))?,
            score: f[3].parse().map_err(|_| err("score"))?,
        })
    })
}

pub fn grade_summary_csv(summary: &[GradeSummary]) -> String {
    let mut s = format!("{GRADE_SUMMARY_HEADER}\n");
    for g in summary {
        writeln!(s, "{},{},{:.6},{:.6},{:.6},{:.6}", g.grade, g.count, g.mean, g.q1, g.median, g.q3).unwrap();
    }
    s
}
