//! Sanity probe: relevance is the presence of one fixed word.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setrank::metrics::Qrels;
use setrank::model::{Candidate, CandidateSet, ModelConfig, ParamStore, Reranker};
use setrank::retrieval::QrelRecord;
use setrank::textproc::{FeatureScaling, Vocab};
use setrank::training::{make_examples, train, TrainConfig, Validation};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> setrank::Result<()> {
    let words = ["the", "a", "of", "near", "with", "and", "old", "new", "tiny", "huge"];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sets = Vec::new();
    let mut qrels = Vec::new();
    for q in 0..200 {
        let candidates: Vec<Candidate> = (0..8)
            .map(|j| {
                let text = (0..4).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ");
                let id = format!("q{q}d{j}");
                qrels.push(QrelRecord { query_id: format!("q{q}"), doc_id: id.clone(), grade: text.contains("tiny") as u32 });
                Candidate { doc_id: id, title: "t".into(), passage: text, retrieval_score: 170.0, first_stage_rank: j + 1 }
            })
            .collect();
        sets.push(CandidateSet { query_id: format!("q{q}"), query_text: "find it".into(), candidates });
    }
    let qrels = Qrels::from_records(&qrels);
    let vocab = Vocab::build(words.iter().copied().chain(["find it", "t"]), 1000);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: 24,
        layers: env("LAYERS", 4),
        global_start: env("GSTART", 5),
        init_std: env("INIT", 0.02),
        ..Default::default()
    };
    let params = ParamStore::<f32>::init(&config, &mut ChaCha8Rng::seed_from_u64(7));
    let mut model = Reranker::new(config, params, vocab, FeatureScaling::default())?;
    let (scores, _) = model.score_traced(&sets[0], setrank::model::ScoreMode::Full)?;
    println!("init scores {scores:?}");
    let examples = make_examples(&sets, &qrels, 1);
    let val = Validation { sets: &sets, qrels: &qrels, threshold: 1 };
    let cfg = TrainConfig { steps: env("STEPS", 300), learning_rate: env("LR", 1e-3), eval_every: 50, ..Default::default() };
    for r in train(&mut model, &examples, &cfg, Some(&val), None)? {
        if r.val_mrr10.is_some() || r.step % 25 == 0 {
            println!("step {} loss {:.4} val {:?}", r.step, r.loss, r.val_mrr10);
        }
    }
    Ok(())
}
