use std::collections::HashSet;

use crate::error::{Error, Result};

/// One first-stage result for a query.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub title: String,
    pub passage: String,
    /// Raw first-stage score, the ranking feature.
    pub retrieval_score: f64,
    /// 1-based rank in the first-stage run.
    pub first_stage_rank: usize,
}

/// A query and the candidates that are scored jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub query_id: String,
    pub query_text: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Non-empty with unique document ids.
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::EmptyCandidateSet(self.query_id.clone()));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.doc_id.as_str()) {
                return Err(Error::DuplicateDoc(c.doc_id.clone()));
            }
        }
        Ok(())
    }

    pub fn retrieval_scores(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.retrieval_score).collect()
    }

    /// The same set with candidates reordered: `out[i] = self[order[i]]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { candidates: order.iter().map(|&i| self.candidates[i].clone()).collect(), ..self.clone() }
    }
}
