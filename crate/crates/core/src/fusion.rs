//! Linear score fusion fitted by coordinate ascent on MRR@10.
//!
//! Each feature is min-max normalized within its query before weighting, so
//! the fit is invariant to per-feature affine rescaling of the raw scores.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{reciprocal_rank, Qrels};
use crate::retrieval::RunRecord;

/// One query's candidates: a feature vector and a relevance flag each.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionQuery {
    pub query_id: String,
    pub doc_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub relevant: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    /// Probes per coordinate and sweep.
    pub steps: usize,
    pub sweeps: usize,
    /// Raised to the feature count if lower, so every axis gets a start.
    pub restarts: usize,
    pub seed: u64,
    /// Cutoff of the reciprocal-rank objective.
    pub k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { steps: 25, sweeps: 5, restarts: 5, seed: 0, k: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
}

/// Outcome of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub model: FusionModel,
    /// Training objective of the returned model.
    pub objective: f64,
    /// Objective after every accepted step of the winning restart, starting
    /// with its initial point.
    pub trace: Vec<f64>,
    /// Set when no probed weighting ranked any relevant candidate in the
    /// top k; the weights are then uniform.
    pub degenerate: bool,
}

/// Per-feature min-max over the candidates; a constant feature maps to 0.
pub fn normalize_query(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = features.first() else { return Vec::new() };
    let d = first.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for f in features {
        for c in 0..d {
            lo[c] = lo[c].min(f[c]);
            hi[c] = hi[c].max(f[c]);
        }
    }
    features
        .iter()
        .map(|f| (0..d).map(|c| if hi[c] > lo[c] { (f[c] - lo[c]) / (hi[c] - lo[c]) } else { 0.0 }).collect())
        .collect()
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Fused scores of one query's candidates.
pub fn fuse_scores(model: &FusionModel, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    if let Some(bad) = features.iter().find(|f| f.len() != model.weights.len()) {
        return Err(Error::InvalidArgument(format!(
            "fusion model has {} weights, candidate has {} features",
            model.weights.len(),
            bad.len()
        )));
    }
    Ok(normalize_query(features).iter().map(|x| dot(&model.weights, x)).collect())
}

/// Rank order by score descending; ties keep candidate order.
fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

struct Prepared {
    features: Vec<Vec<f64>>,
    relevant: Vec<bool>,
}

fn objective(queries: &[Prepared], w: &[f64], k: usize) -> f64 {
    let total: f64 = queries
        .iter()
        .map(|q| {
            let scores: Vec<f64> = q.features.iter().map(|x| dot(w, x)).collect();
            let grades: Vec<u32> = order(&scores).into_iter().map(|i| q.relevant[i] as u32).collect();
            reciprocal_rank(&grades, k, 1)
        })
        .sum();
    total / queries.len() as f64
}

fn l1_normalize(w: &mut [f64]) {
    let norm: f64 = w.iter().map(|x| x.abs()).sum();
    if norm > 0.0 {
        w.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Candidate values for one weight: zero, then `value ± 2^s · base` over a
/// doubling ladder, `steps` probes in all.
fn probes(value: f64, steps: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut delta = 1e-3;
    while out.len() < steps {
        out.push(value + delta);
        if out.len() < steps {
            out.push(value - delta);
        }
        delta *= 2.0;
    }
    out
}

fn ascend(queries: &[Prepared], start: Vec<f64>, config: &FusionConfig) -> (Vec<f64>, f64, Vec<f64>) {
    let mut w = start;
    let mut best = objective(queries, &w, config.k);
    let mut trace = vec![best];
    for _ in 0..config.sweeps {
        for c in 0..w.len() {
            let mut chosen = None;
            for v in probes(w[c], config.steps) {
                let mut trial = w.clone();
                trial[c] = v;
                if trial.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let value = objective(queries, &trial, config.k);
                if value > chosen.map_or(best, |(b, _)| b) {
                    chosen = Some((value, v));
                }
            }
            if let Some((value, v)) = chosen {
                w[c] = v;
                best = value;
                trace.push(best);
            }
        }
        // positive rescaling leaves every ranking, hence the objective, unchanged
        l1_normalize(&mut w);
    }
    (w, best, trace)
}

/// Fits weights by coordinate ascent from each feature axis and from seeded
/// random points, returning the best restart (earliest on ties).
pub fn coordinate_ascent_fit(names: &[String], queries: &[FusionQuery], config: &FusionConfig) -> Result<FitReport> {
    let d = names.len();
    if d == 0 {
        return Err(Error::InvalidArgument("fusion needs at least one feature".into()));
    }
    if config.steps == 0 {
        return Err(Error::InvalidArgument("fusion needs at least one probe per coordinate".into()));
    }
    let mut prepared = Vec::new();
    for q in queries {
        if q.features.len() != q.relevant.len() || q.features.iter().any(|f| f.len() != d) {
            return Err(Error::InvalidArgument(format!("query {} has inconsistent fusion features", q.query_id)));
        }
        if q.relevant.iter().any(|&r| r) {
            prepared.push(Prepared { features: normalize_query(&q.features), relevant: q.relevant.clone() });
        }
    }
    if prepared.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one query with a relevant candidate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    for r in 0..config.restarts.max(d) {
        let start: Vec<f64> = if r < d {
            (0..d).map(|c| (c == r) as u8 as f64).collect()
        } else {
            let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            l1_normalize(&mut w);
            w
        };
        let run = ascend(&prepared, start, config);
        if best.as_ref().is_none_or(|b| run.1 > b.1) {
            best = Some(run);
        }
    }
    let (mut weights, objective, trace) = best.expect("at least one restart");
    let degenerate = objective == 0.0;
    if degenerate {
        log::warn!("fusion objective is 0 for every probed weighting; using uniform weights");
        weights = vec![1.0 / d as f64; d];
    }
    Ok(FitReport { model: FusionModel { names: names.to_vec(), weights }, objective, trace, degenerate })
}

/// Joins per-feature runs by (query, document). Candidates are those of the
/// first run in its rank order; a document missing from another run takes
/// that run's lowest score for the query.
pub fn join_runs(runs: &[&[RunRecord]], qrels: Option<&Qrels>, threshold: u32) -> Result<Vec<FusionQuery>> {
    let Some((base, rest)) = runs.split_first() else {
        return Err(Error::InvalidArgument("fusion needs at least one run".into()));
    };
    let lookups: Vec<HashMap<(&str, &str), f64>> = rest
        .iter()
        .map(|run| run.iter().map(|r| ((r.query_id.as_str(), r.doc_id.as_str()), r.score)).collect())
        .collect();
    let floors: Vec<HashMap<&str, f64>> = rest
        .iter()
        .map(|run| {
            let mut m: HashMap<&str, f64> = HashMap::new();
            for r in run.iter() {
                let e = m.entry(r.query_id.as_str()).or_insert(f64::INFINITY);
                *e = e.min(r.score);
            }
            m
        })
        .collect();
    let mut by_query: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in base.iter() {
        by_query.entry(r.query_id.as_str()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(by_query.len());
    for (q, mut recs) in by_query {
        recs.sort_by(|a, b| a.rank.cmp(&b.rank).then(a.doc_id.cmp(&b.doc_id)));
        let mut features = Vec::with_capacity(recs.len());
        for r in &recs {
            let mut f = vec![r.score];
            for (lookup, floor) in lookups.iter().zip(&floors) {
                let v = lookup.get(&(q, r.doc_id.as_str())).copied().or_else(|| floor.get(q).copied());
                f.push(v.unwrap_or(0.0));
            }
            features.push(f);
        }
        let relevant = recs.iter().map(|r| qrels.is_some_and(|qr| qr.grade(q, &r.doc_id) >= threshold)).collect();
        out.push(FusionQuery {
            query_id: q.to_string(),
            doc_ids: recs.iter().map(|r| r.doc_id.clone()).collect(),
            features,
            relevant,
        });
    }
    Ok(out)
}

/// Scores every query with the model and ranks by fused score.
pub fn fused_run(model: &FusionModel, queries: &[FusionQuery], tag: &str) -> Result<Vec<RunRecord>> {
    let mut run = Vec::new();
    for q in queries {
        let scores = fuse_scores(model, &q.features)?;
        for (rank, i) in order(&scores).into_iter().enumerate() {
            run.push(RunRecord {
                query_id: q.query_id.clone(),
                doc_id: q.doc_ids[i].clone(),
                rank: rank + 1,
                score: scores[i],
                tag: tag.to_string(),
            });
        }
    }
    Ok(run)
}

impl FusionModel {
    /// Two lines: tab-separated feature names, then the weights.
    pub fn to_text(&self) -> String {
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        format!("{}\n{}\n", self.names.join("\t"), weights.join("\t"))
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse { source_name: source.to_string(), line, message };
        let mut lines = text.lines();
        let names: Vec<String> = lines.next().ok_or_else(|| err(1, "missing names".into()))?.split('\t').map(String::from).collect();
        let weights = lines
            .next()
            .ok_or_else(|| err(2, "missing weights".into()))?
            .split('\t')
            .map(|w| w.parse::<f64>().map_err(|e| err(2, format!("bad weight {w:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if names.len() != weights.len() {
            return Err(err(2, format!("{} names but {} weights", names.len(), weights.len())));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err(3, "unexpected trailing content".into()));
        }
        Ok(Self { names, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
