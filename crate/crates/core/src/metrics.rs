//! Ranking metrics over run files and graded judgments.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::retrieval::{QrelRecord, RunRecord};

/// Judgments keyed by query, then document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Qrels {
    grades: HashMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn from_records(records: &[QrelRecord]) -> Self {
        let mut grades: HashMap<String, HashMap<String, u32>> = HashMap::new();
        for r in records {
            grades.entry(r.query_id.clone()).or_default().insert(r.doc_id.clone(), r.grade);
        }
        Self { grades }
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades.get(query_id).and_then(|m| m.get(doc_id)).copied().unwrap_or(0)
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.grades.contains_key(query_id)
    }

    pub fn judged(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn max_grade(&self) -> u32 {
        self.grades.values().flat_map(|m| m.values()).copied().max().unwrap_or(0)
    }

    /// Grade 2 on graded (0–3) judgments, grade 1 on binary ones.
    pub fn default_threshold(&self) -> u32 {
        if self.max_grade() > 1 {
            2
        } else {
            1
        }
    }
}

/// Per-query document lists in rank order (rank, then score desc, then id).
pub fn rankings(run: &[RunRecord]) -> BTreeMap<String, Vec<String>> {
    let mut by_query: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in run {
        by_query.entry(r.query_id.clone()).or_default().push(r);
    }
    by_query
        .into_iter()
        .map(|(q, mut recs)| {
            recs.sort_by(|a, b| a.rank.cmp(&b.rank).then(b.score.total_cmp(&a.score)).then(a.doc_id.cmp(&b.doc_id)));
            (q, recs.into_iter().map(|r| r.doc_id.clone()).collect())
        })
        .collect()
}

/// `1 / rank` of the first grade ≥ `threshold` within the top `k`.
pub fn reciprocal_rank(grades: &[u32], k: usize, threshold: u32) -> f64 {
    grades.iter().take(k).position(|&g| g >= threshold).map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Mean of precision at each relevant position, over `total_relevant`.
pub fn average_precision(grades: &[u32], total_relevant: usize, threshold: u32) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &g) in grades.iter().enumerate() {
        if g >= threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant as f64
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades.enumerate().map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2()).sum()
}

/// DCG@k with gain `2^g - 1`, normalized by the DCG@k of the ideal ordering
/// of `judged` grades.
pub fn ndcg(grades: &[u32], judged: &[u32], k: usize) -> f64 {
    let mut ideal = judged.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(grades.iter().copied().take(k)) / idcg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    MrrAt(usize),
    Mrr,
    Map,
    NdcgAt(usize),
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::MrrAt(k) => format!("mrr@{k}"),
            Metric::Mrr => "mrr".into(),
            Metric::Map => "map".into(),
            Metric::NdcgAt(k) => format!("ndcg@{k}"),
        }
    }

    pub const DEFAULT: [Metric; 4] = [Metric::MrrAt(10), Metric::Mrr, Metric::Map, Metric::NdcgAt(10)];
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown metric {s}"));
        let lower = s.trim().to_ascii_lowercase();
        match lower.split_once('@') {
            Some(("mrr", k)) => Ok(Metric::MrrAt(k.parse().map_err(|_| bad())?)),
            Some(("ndcg", k)) => Ok(Metric::NdcgAt(k.parse().map_err(|_| bad())?)),
            None if lower == "mrr" => Ok(Metric::Mrr),
            None if lower == "map" => Ok(Metric::Map),
            _ => Err(bad()),
        }
    }
}

/// Per-query values and their mean for one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub metric: Metric,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

impl EvalResult {
    pub fn query_count(&self) -> usize {
        self.per_query.len()
    }
}

/// Scores every run query that has judgments; others are left out.
pub fn evaluate(run: &[RunRecord], qrels: &Qrels, metric: Metric, threshold: u32) -> EvalResult {
    let mut per_query = BTreeMap::new();
    for (q, docs) in rankings(run) {
        let Some(judged) = qrels.judged(&q) else { continue };
        let grades: Vec<u32> = docs.iter().map(|d| judged.get(d).copied().unwrap_or(0)).collect();
        let value = match metric {
            Metric::MrrAt(k) => reciprocal_rank(&grades, k, threshold),
            Metric::Mrr => reciprocal_rank(&grades, grades.len(), threshold),
            Metric::Map => {
                let total = judged.values().filter(|&&g| g >= threshold).count();
                average_precision(&grades, total, threshold)
            }
            Metric::NdcgAt(k) => {
                let all: Vec<u32> = judged.values().copied().collect();
                ndcg(&grades, &all, k)
            }
        };
        per_query.insert(q, value);
    }
    let mean = if per_query.is_empty() { 0.0 } else { per_query.values().sum::<f64>() / per_query.len() as f64 };
    EvalResult { metric, per_query, mean }
}

pub fn mrr_at_k(run: &[RunRecord], qrels: &Qrels, k: usize, threshold: u32) -> EvalResult {
    evaluate(run, qrels, Metric::MrrAt(k), threshold)
}

pub fn mrr(run: &[RunRecord], qrels: &Qrels, threshold: u32) -> EvalResult {
    evaluate(run, qrels, Metric::Mrr, threshold)
}

pub fn mean_average_precision(run: &[RunRecord], qrels: &Qrels, threshold: u32) -> EvalResult {
    evaluate(run, qrels, Metric::Map, threshold)
}

pub fn ndcg_at_k(run: &[RunRecord], qrels: &Qrels, k: usize) -> EvalResult {
    evaluate(run, qrels, Metric::NdcgAt(k), 0)
}

/// CSV with one row per query and a closing `all` row of means.
pub fn report_csv(results: &[EvalResult]) -> String {
    let mut s = String::from("query_id");
    for r in results {
        write!(s, ",{}", r.metric.name()).unwrap();
    }
    s.push('\n');
    if let Some(first) = results.first() {
        for q in first.per_query.keys() {
            s.push_str(q);
            for r in results {
                write!(s, ",{:.6}", r.per_query[q]).unwrap();
            }
            s.push('\n');
        }
    }
    s.push_str("all");
    for r in results {
        write!(s, ",{:.6}", r.mean).unwrap();
    }
    s.push('\n');
    s
}
