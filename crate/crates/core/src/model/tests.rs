use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck::check_gradients;
use crate::tensor::Tensor;

const WORDS: &[&str] = &["red", "blue", "green", "stone", "river", "cloud", "apple", "tower", "small", "large"];

fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        global_start: 2,
        hidden: 16,
        heads_local: 2,
        heads_global: 2,
        ffn_size: 32,
        vocab_size: 200,
        max_seq_len: 24,
        ..Default::default()
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> CandidateSet {
    let mut phrase = |len: usize| (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
    let query_text = phrase(2);
    let candidates = (0..n)
        .map(|i| Candidate {
            doc_id: format!("d{i}"),
            title: phrase(1),
            passage: phrase(3 + i % 4),
            retrieval_score: 165.0 + 2.5 * i as f64,
            first_stage_rank: i + 1,
        })
        .collect();
    CandidateSet { query_id: "q".into(), query_text, candidates }
}

fn reranker(config: ModelConfig, seed: u64) -> Reranker<f64> {
    let vocab = Vocab::build(WORDS.iter().copied(), config.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::init(&config, &mut rng);
    // larger weights make cross-candidate effects visible in the scores
    for (_, t) in params.iter_mut() {
        if t.rank() == 2 {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
    }
    Reranker::new(config, params, vocab, FeatureScaling::default()).unwrap()
}

#[test]
fn scores_are_probabilities_and_ranking_is_sorted() {
    let r = reranker(tiny_config(), 1);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(2), 5);
    let ranked = r.rerank(&set, ScoreMode::Full).unwrap();
    assert_eq!(ranked.len(), 5);
    for w in ranked.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
    assert!(ranked.iter().all(|c| c.score > 0.0 && c.score < 1.0));
    assert_eq!(ranked.iter().map(|c| c.new_rank).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
}

#[test]
fn ties_fall_back_to_first_stage_rank() {
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(0), 3);
    let ranked = rank_by_score(&set, &[0.5, 0.5, 0.9]);
    let ids: Vec<_> = ranked.iter().map(|c| c.doc_id.as_str()).collect();
    assert_eq!(ids, ["d2", "d0", "d1"]);
}

#[test]
fn empty_set_is_an_error() {
    let r = reranker(tiny_config(), 1);
    let set = CandidateSet { query_id: "q".into(), query_text: "red".into(), candidates: vec![] };
    assert!(matches!(r.score(&set, ScoreMode::Full), Err(Error::EmptyCandidateSet(_))));
}

#[test]
fn prob_true_is_the_two_way_softmax() {
    assert_eq!(prob_true(0.0, 0.0), 0.5);
    assert!((prob_true(2.0, 0.0) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    assert!(prob_true(800.0, 0.0) <= 1.0 && prob_true(-800.0, 0.0) >= 0.0);
}

#[test]
fn single_candidate_attends_to_itself() {
    let r = reranker(tiny_config(), 3);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(4), 1);
    let (_, traces) = r.score_traced(&set, ScoreMode::Full).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(traces[0].weights.shape(), &[2, 1, 1]);
    assert!(traces[0].weights.data().iter().all(|&w| w == 1.0));
}

#[test]
fn attention_rows_sum_to_one() {
    let r = reranker(tiny_config(), 3);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(4), 4);
    let (_, traces) = r.score_traced(&set, ScoreMode::Full).unwrap();
    for row in traces[0].weights.data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn permuting_candidates_permutes_scores_exactly() {
    let r = reranker(tiny_config(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let set = random_set(&mut rng, 6);
        let (base, base_tr) = r.score_traced(&set, ScoreMode::Full).unwrap();
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut rng);
        let (perm, perm_tr) = r.score_traced(&set.permuted(&order), ScoreMode::Full).unwrap();
        for (i, &o) in order.iter().enumerate() {
            assert_eq!(perm[i].to_bits(), base[o].to_bits());
            for h in 0..2 {
                for (k, &ok) in order.iter().enumerate() {
                    let a = perm_tr[0].weights.data()[h * 36 + i * 6 + k];
                    let b = base_tr[0].weights.data()[h * 36 + o * 6 + ok];
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}

#[test]
fn global_attention_changes_scores() {
    let r = reranker(tiny_config(), 7);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(8), 4);
    assert_ne!(r.score(&set, ScoreMode::Full).unwrap(), r.score(&set, ScoreMode::NoGlobal).unwrap());
}

#[test]
fn without_global_joint_equals_singletons() {
    let r = reranker(tiny_config().without_global(), 9);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(10), 5);
    let inputs = r.encode(&set, ScoreMode::Full).unwrap();
    let (joint, traces) = r.score_inputs_traced(&inputs, true).unwrap();
    assert!(traces.is_empty());
    for (i, inp) in inputs.iter().enumerate() {
        let (single, _) = r.score_inputs_traced(std::slice::from_ref(inp), true).unwrap();
        assert_eq!(single[0].to_bits(), joint[i].to_bits());
    }
}

#[test]
fn zero_global_output_matches_no_global_mode() {
    let mut r = reranker(tiny_config(), 11);
    r.params.zero_global_output();
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(12), 5);
    let full = r.score(&set, ScoreMode::Full).unwrap();
    let off = r.score(&set, ScoreMode::NoGlobal).unwrap();
    assert_eq!(full.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), off.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn no_feature_mode_drops_the_feature_segment() {
    let r = reranker(tiny_config(), 1);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(2), 2);
    let with = r.encode(&set, ScoreMode::Full).unwrap();
    let without = r.encode(&set, ScoreMode::NoFeature).unwrap();
    let feat = r.vocab.reserved(crate::textproc::FEATURE);
    assert!(with[0].ids.contains(&feat));
    assert!(!without[0].ids.contains(&feat));
}

#[test]
fn padding_content_does_not_leak() {
    // padded positions are masked, so what token id sits there is irrelevant
    let r = reranker(tiny_config().without_global(), 13);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(14), 1);
    let mut inputs = r.encode(&set, ScoreMode::Full).unwrap();
    let (a, _) = r.score_inputs_traced(&inputs, true).unwrap();
    let real = inputs[0].true_len();
    for id in &mut inputs[0].ids[real..] {
        *id = 7;
    }
    let (b, _) = r.score_inputs_traced(&inputs, true).unwrap();
    assert!((a[0] - b[0]).abs() < 1e-12);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let config = tiny_config();
    let r = reranker(config.clone(), 15);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(16), 3);
    let inputs = r.encode(&set, ScoreMode::Full).unwrap();
    let tf = [r.vocab.true_id(), r.vocab.false_id()];
    let targets = [0usize, 1, 1];

    // embeddings dominate the parameter count; check a representative of
    // every group, holding the others fixed
    let groups = [
        "embed.token",
        "embed.position",
        "encoder.1.attn_norm.gain",
        "encoder.1.attn.q",
        "encoder.1.attn.k",
        "encoder.1.attn.v",
        "encoder.1.attn.o",
        "encoder.1.ffn.in",
        "encoder.2.ffn.out",
        "encoder.2.global.norm.bias",
        "encoder.2.global.q",
        "encoder.2.global.k",
        "encoder.2.global.v",
        "encoder.2.global.o",
        "encoder.final_norm.gain",
        "decoder.start",
        "decoder.1.self.v",
        "decoder.1.cross.q",
        "decoder.1.cross.k",
        "decoder.1.ffn.out",
        "decoder.final_norm.bias",
    ];
    let group_inputs: Vec<Tensor<f64>> = groups.iter().map(|g| r.params.get(g).unwrap().clone()).collect();
    let errs = check_gradients(&group_inputs, 1e-5, |tape, vars| {
        let mut net = Network::bind(tape, &r.params, &config, false);
        for (g, v) in groups.iter().zip(vars) {
            net.rebind(g, *v);
        }
        let fwd = net.forward(tape, &inputs, tf, true)?;
        tape.cross_entropy(fwd.logits, &targets)
    })
    .unwrap();
    for (g, e) in groups.iter().zip(&errs) {
        assert!(*e < 1e-3, "{g}: relative error {e}");
    }
}

#[test]
fn save_and_load_round_trip() {
    let r = reranker(tiny_config(), 17);
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path()).unwrap();
    let back = Reranker::<f64>::load(dir.path()).unwrap();
    assert_eq!(back.params, r.params);
    assert_eq!(back.config, r.config);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(18), 3);
    assert_eq!(back.score(&set, ScoreMode::Full).unwrap(), r.score(&set, ScoreMode::Full).unwrap());
    assert_eq!(parse_scaling("fixed:165:190:100").unwrap(), FeatureScaling::Fixed(FeatureSpec::DENSE_RETRIEVER));
    assert!(parse_scaling("fixed:1").is_err());
}

#[test]
fn different_candidates_get_different_scores() {
    let r = reranker(tiny_config().without_global(), 19);
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(20), 4);
    let s = r.score(&set, ScoreMode::Full).unwrap();
    assert!(s.windows(2).any(|w| w[0] != w[1]), "{s:?}");
}

