//! Set-aware sequence-to-sequence re-ranker.

mod candidates;
mod config;
mod network;
mod params;

use std::path::Path;

pub use candidates::{Candidate, CandidateSet};
pub use config::ModelConfig;
pub use network::{Forward, GlobalTrace, GlobalVars, Network};
pub use params::{param_layout, ParamStore};

use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::scalar::Scalar;
use crate::tensor::Tape;
use crate::textproc::{build_input, FeatureScaling, FeatureSpec, TokenizedInput, Vocab};

/// Which parts of the model are active when scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScoreMode {
    #[default]
    Full,
    /// Omit the `Feature:` segment from every input.
    NoFeature,
    /// Skip the global-attention layers.
    NoGlobal,
}

impl ScoreMode {
    pub fn uses_feature(self) -> bool {
        self != ScoreMode::NoFeature
    }

    pub fn uses_global(self) -> bool {
        self != ScoreMode::NoGlobal
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_feature" | "no-feature" => Ok(Self::NoFeature),
            "no_global" | "no-global" => Ok(Self::NoGlobal),
            _ => Err(Error::InvalidArgument(format!("unknown score mode {s}"))),
        }
    }
}

/// A candidate after re-ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub doc_id: String,
    /// Probability of "true", in `(0, 1)`.
    pub score: f64,
    /// 1-based rank after re-ranking.
    pub new_rank: usize,
}

/// `P(true)` from a `[true, false]` logit pair, computed stably.
pub fn prob_true(l_true: f64, l_false: f64) -> f64 {
    let d = l_false - l_true;
    if d >= 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Orders by score descending, ties by first-stage rank ascending.
pub fn rank_by_score(set: &CandidateSet, scores: &[f64]) -> Vec<ScoredCandidate> {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(set.candidates[a].first_stage_rank.cmp(&set.candidates[b].first_stage_rank))
    });
    idx.iter()
        .enumerate()
        .map(|(r, &i)| ScoredCandidate { doc_id: set.candidates[i].doc_id.clone(), score: scores[i], new_rank: r + 1 })
        .collect()
}

/// Weights, vocabulary and feature scaling needed to score candidate sets.
#[derive(Clone, Debug)]
pub struct Reranker<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub vocab: Vocab,
    pub scaling: FeatureScaling,
}

fn scaling_to_text(s: &FeatureScaling) -> String {
    match s {
        FeatureScaling::Fixed(f) => format!("fixed:{}:{}:{}", f.min_raw, f.max_raw, f.buckets),
        FeatureScaling::PerQuery { buckets } => format!("per_query:{buckets}"),
    }
}

/// Parses `per_query:B` or `fixed:MIN:MAX:B`.
pub fn parse_scaling(text: &str) -> Result<FeatureScaling> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Config(format!("bad feature scaling {text}"));
    match parts.as_slice() {
        ["per_query", b] => Ok(FeatureScaling::PerQuery { buckets: b.parse().map_err(|_| bad())? }),
        ["fixed", lo, hi, b] => Ok(FeatureScaling::Fixed(FeatureSpec {
            min_raw: lo.parse().map_err(|_| bad())?,
            max_raw: hi.parse().map_err(|_| bad())?,
            buckets: b.parse().map_err(|_| bad())?,
        })),
        _ => Err(bad()),
    }
}

const CONFIG_FILE: &str = "model.cfg";
const VOCAB_FILE: &str = "vocab.txt";
const PARAMS_FILE: &str = "params.ckpt";

impl<T: Scalar> Reranker<T> {
    pub fn new(config: ModelConfig, params: ParamStore<T>, vocab: Vocab, scaling: FeatureScaling) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        if vocab.len() > config.vocab_size {
            return Err(Error::Config(format!("vocabulary of {} exceeds vocab_size {}", vocab.len(), config.vocab_size)));
        }
        Ok(Self { config, params, vocab, scaling })
    }

    /// Tokenized inputs for every candidate, in set order.
    pub fn encode(&self, set: &CandidateSet, mode: ScoreMode) -> Result<Vec<TokenizedInput>> {
        encode_set(set, &self.vocab, &self.scaling, self.config.max_seq_len, mode.uses_feature())
    }

    /// `P(true)` per candidate, plus global-attention traces.
    pub fn score_traced(&self, set: &CandidateSet, mode: ScoreMode) -> Result<(Vec<f64>, Vec<GlobalTrace<T>>)> {
        set.validate()?;
        let inputs = self.encode(set, mode)?;
        self.score_inputs_traced(&inputs, mode.uses_global())
    }

    /// Scores already tokenized inputs as one set.
    pub fn score_inputs_traced(
        &self,
        inputs: &[TokenizedInput],
        use_global: bool,
    ) -> Result<(Vec<f64>, Vec<GlobalTrace<T>>)> {
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, &self.params, &self.config, false);
        let fwd = net.forward(&mut tape, inputs, [self.vocab.true_id(), self.vocab.false_id()], use_global)?;
        let logits = tape.value(fwd.logits);
        let scores =
            (0..inputs.len()).map(|i| prob_true(logits.row(i)[0].as_f64(), logits.row(i)[1].as_f64())).collect();
        let traces = fwd.global.iter().map(|(j, g)| g.trace(&tape, *j)).collect();
        Ok((scores, traces))
    }

    pub fn score(&self, set: &CandidateSet, mode: ScoreMode) -> Result<Vec<f64>> {
        Ok(self.score_traced(set, mode)?.0)
    }

    /// Candidates sorted by descending score.
    pub fn rerank(&self, set: &CandidateSet, mode: ScoreMode) -> Result<Vec<ScoredCandidate>> {
        let scores = self.score(set, mode)?;
        Ok(rank_by_score(set, &scores))
    }

    /// Writes config, vocabulary and weights into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut kv = self.config.to_kv();
        kv.set("feature_scaling", scaling_to_text(&self.scaling));
        kv.save(&dir.join(CONFIG_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        self.params.save(&dir.join(PARAMS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let kv = KvConfig::load(&dir.join(CONFIG_FILE))?;
        let scaling = match kv.raw("feature_scaling") {
            Some(s) => parse_scaling(s)?,
            None => FeatureScaling::default(),
        };
        let mut model_kv = KvConfig::new();
        for k in kv.keys().filter(|k| *k != "feature_scaling") {
            model_kv.set(k, kv.raw(k).unwrap_or_default());
        }
        let config = ModelConfig::from_kv(&model_kv)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let params = ParamStore::load(&dir.join(PARAMS_FILE))?;
        Self::new(config, params, vocab, scaling)
    }
}

/// Scalar type (`f32` or `f64`) of the weights a model directory holds.
pub fn stored_dtype(dir: &Path) -> Result<String> {
    let path = dir.join(PARAMS_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    crate::tensor::checkpoint_dtype(&bytes)
}

/// Renders and tokenizes every candidate of `set`.
pub fn encode_set(
    set: &CandidateSet,
    vocab: &Vocab,
    scaling: &FeatureScaling,
    max_seq_len: usize,
    with_feature: bool,
) -> Result<Vec<TokenizedInput>> {
    let features = scaling.discretize_set(&set.retrieval_scores());
    set.candidates
        .iter()
        .zip(features)
        .map(|(c, f)| build_input(&set.query_text, &c.title, with_feature.then_some(f), &c.passage, vocab, max_seq_len))
        .collect()
}

#[cfg(test)]
mod tests;
