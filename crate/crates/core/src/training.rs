//! Two-phase fine-tuning with a true/false cross-entropy objective.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::metrics::{mrr_at_k, Qrels};
use crate::model::{rank_by_score, CandidateSet, Network, Reranker, ScoreMode};
use crate::retrieval::RunRecord;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::textproc::TokenizedInput;

/// Which input layout a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Inputs without the `Feature:` segment.
    Warmup,
    /// Inputs with the discretized retrieval score.
    Feature,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Feature => "feature",
        }
    }

    pub fn score_mode(self) -> ScoreMode {
        match self {
            Phase::Warmup => ScoreMode::NoFeature,
            Phase::Feature => ScoreMode::Full,
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" | "warmup_no_feature" => Ok(Phase::Warmup),
            "feature" | "with_feature" => Ok(Phase::Feature),
            _ => Err(Error::Config(format!("unknown phase {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub learning_rate: f64,
    pub steps: usize,
    /// Candidate sets per optimizer step.
    pub batch: usize,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// 0 disables periodic validation.
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase: Phase::Warmup,
            learning_rate: 1e-3,
            steps: 2000,
            batch: 4,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Desk schedule defaults for the second phase.
    pub fn feature_phase() -> Self {
        Self { phase: Phase::Feature, steps: 200, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("phase", self.phase.name());
        kv.set("learning_rate", self.learning_rate);
        kv.set("steps", self.steps);
        kv.set("batch", self.batch);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("eval_every", self.eval_every);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("adam_eps", self.adam_eps);
        kv
    }

    /// Missing keys keep the values of `base`.
    pub fn from_kv(kv: &KvConfig, base: &TrainConfig) -> Result<Self> {
        let cfg = Self {
            phase: kv.get("phase")?.unwrap_or(base.phase),
            learning_rate: kv.get("learning_rate")?.unwrap_or(base.learning_rate),
            steps: kv.get("steps")?.unwrap_or(base.steps),
            batch: kv.get("batch")?.unwrap_or(base.batch),
            seed: kv.get("seed")?.unwrap_or(base.seed),
            checkpoint_every: kv.get("checkpoint_every")?.unwrap_or(base.checkpoint_every),
            eval_every: kv.get("eval_every")?.unwrap_or(base.eval_every),
            beta1: kv.get("beta1")?.unwrap_or(base.beta1),
            beta2: kv.get("beta2")?.unwrap_or(base.beta2),
            adam_eps: kv.get("adam_eps")?.unwrap_or(base.adam_eps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A candidate set with one binary target per candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub set: CandidateSet,
    pub targets: Vec<bool>,
}

/// Targets are `grade ≥ threshold`; unjudged candidates count as negatives.
pub fn make_examples(sets: &[CandidateSet], qrels: &Qrels, threshold: u32) -> Vec<TrainExample> {
    sets.iter()
        .filter(|s| !s.is_empty())
        .map(|s| TrainExample {
            set: s.clone(),
            targets: s.candidates.iter().map(|c| qrels.grade(&s.query_id, &c.doc_id) >= threshold).collect(),
        })
        .collect()
}

/// Mean cross-entropy of `[true, false]` logit pairs against targets.
pub fn true_false_loss<T: Scalar>(tape: &mut Tape<T>, logits: crate::tensor::Var, targets: &[bool]) -> Result<crate::tensor::Var> {
    let idx: Vec<usize> = targets.iter().map(|&t| if t { 0 } else { 1 }).collect();
    tape.cross_entropy(logits, &idx)
}

/// Adam with bias correction, state kept per parameter path.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update<'a>(&mut self, params: impl Iterator<Item = (&'a String, &'a mut Tensor<T>)>, grads: &BTreeMap<String, Tensor<T>>)
    where
        T: 'a,
    {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (name, p) in params {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.numel()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub val_mrr10: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,phase,loss,val_mrr10\n");
    for r in rows {
        let val = r.val_mrr10.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(s, "{},{},{:.6},{}", r.step, r.phase.name(), r.loss, val).unwrap();
    }
    s
}

/// Validation data: candidate sets plus judgments.
pub struct Validation<'a> {
    pub sets: &'a [CandidateSet],
    pub qrels: &'a Qrels,
    pub threshold: u32,
}

/// Re-ranks every set and returns the result as a run.
pub fn rerank_run<T: Scalar>(model: &Reranker<T>, sets: &[CandidateSet], mode: ScoreMode, tag: &str) -> Result<Vec<RunRecord>> {
    let mut run = Vec::new();
    for set in sets {
        for c in model.rerank(set, mode)? {
            run.push(RunRecord {
                query_id: set.query_id.clone(),
                doc_id: c.doc_id,
                rank: c.new_rank,
                score: c.score,
                tag: tag.to_string(),
            });
        }
    }
    Ok(run)
}

pub fn validation_mrr10<T: Scalar>(model: &Reranker<T>, val: &Validation<'_>, mode: ScoreMode) -> Result<f64> {
    let run = rerank_run(model, val.sets, mode, "val")?;
    Ok(mrr_at_k(&run, val.qrels, 10, val.threshold).mean)
}

/// Where and how often to write checkpoints.
pub struct CheckpointSink {
    pub dir: PathBuf,
}

impl CheckpointSink {
    pub fn step_dir(&self, step: usize) -> PathBuf {
        self.dir.join(format!("step-{step:06}"))
    }
}

/// Loss and gradients of one candidate set, gradients keyed by parameter path.
fn set_gradients<T: Scalar>(
    model: &Reranker<T>,
    inputs: &[TokenizedInput],
    targets: &[bool],
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, &model.params, &model.config, true);
    let fwd = net.forward(&mut tape, inputs, [model.vocab.true_id(), model.vocab.false_id()], true)?;
    let loss = true_false_loss(&mut tape, fwd.logits, targets)?;
    let value = tape.value(loss).item().as_f64();
    let mut grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, &var) in net.vars() {
        if let Some(g) = grads.take(var) {
            out.insert(name.clone(), g);
        }
    }
    Ok((value, out))
}

/// Runs `config.steps` Adam steps over whole candidate sets.
///
/// Sets are visited in epochs, each a seeded shuffle; the per-step loss and
/// gradient are means over the batch, accumulated in batch order. Global
/// attention participates whenever the model has it.
pub fn train<T: Scalar>(
    model: &mut Reranker<T>,
    data: &[TrainExample],
    config: &TrainConfig,
    val: Option<&Validation<'_>>,
    sink: Option<&CheckpointSink>,
) -> Result<Vec<LogRow>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mode = config.phase.score_mode();
    let encoded: Vec<Vec<TokenizedInput>> = data.iter().map(|ex| model.encode(&ex.set, mode)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let mut log = Vec::with_capacity(config.steps);
    let inv_batch = T::of(1.0 / config.batch as f64);
    for step in 1..=config.steps {
        let mut total_loss = 0.0;
        let mut acc: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for _ in 0..config.batch {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let (loss, grads) = set_gradients(model, &encoded[i], &data[i].targets)?;
            total_loss += loss;
            for (name, g) in grads {
                match acc.get_mut(&name) {
                    Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x = *x + y),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        let loss = total_loss / config.batch as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        for g in acc.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * inv_batch);
        }
        adam.update(model.params.iter_mut(), &acc);

        let val_mrr10 = match val {
            Some(v) if config.eval_every > 0 && (step % config.eval_every == 0 || step == config.steps) => {
                Some(validation_mrr10(model, v, mode)?)
            }
            _ => None,
        };
        log::debug!("step {step} loss {loss:.6}");
        if let Some(v) = val_mrr10 {
            log::info!("step {step} {} loss {loss:.4} val MRR@10 {v:.4}", config.phase.name());
        }
        log.push(LogRow { step, phase: config.phase, loss, val_mrr10 });
        if let Some(s) = sink {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                model.save(&s.step_dir(step))?;
            }
        }
    }
    if let Some(s) = sink {
        model.save(&s.dir)?;
        std::fs::write(s.dir.join("train_log.csv"), log_csv(&log)).map_err(|e| Error::io(s.dir.join("train_log.csv"), e))?;
    }
    Ok(log)
}

/// Saves `log` as CSV.
pub fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    std::fs::write(path, log_csv(log)).map_err(|e| Error::io(path, e))
}

/// Re-ranked run of `sets` as ranked by `scores`.
pub fn run_from_scores(set: &CandidateSet, scores: &[f64], tag: &str) -> Vec<RunRecord> {
    rank_by_score(set, scores)
        .into_iter()
        .map(|c| RunRecord {
            query_id: set.query_id.clone(),
            doc_id: c.doc_id,
            rank: c.new_rank,
            score: c.score,
            tag: tag.to_string(),
        })
        .collect()
}
