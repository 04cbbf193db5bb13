//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Criteria 4, 5 and 10 train small models for the full desk schedule and
//! take a few minutes on one core.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setrank::analysis::{attention_records, normalize_layer, summarize_attention};
use setrank::fusion::{self, FusionConfig, FusionModel};
use setrank::metrics::{evaluate, mrr_at_k, Metric, Qrels};
use setrank::model::{Candidate, CandidateSet, ModelConfig, Network, ParamStore, Reranker, ScoreMode};
use setrank::retrieval::{
    assemble_candidate_sets, format_qrels, format_run, parse_qrels, parse_run, InvertedIndex, RunRecord,
};
use setrank::synthgen::{generate, pointwise_ceiling, SynthSpec, Task};
use setrank::tensor::gradcheck::check_gradients;
use setrank::textproc::{discretize_feature, FeatureScaling, FeatureSpec, Vocab};
use setrank::training::{make_examples, rerank_run, train, true_false_loss, Phase, TrainConfig, TrainExample};
use setrank::{Scalar, Tensor};

const WORDS: &[&str] = &["red", "blue", "green", "stone", "river", "cloud", "apple", "tower", "small", "large"];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(outcomes: &mut Vec<Outcome>, id: u32, name: &'static str, pass: bool, detail: String) {
    println!("{} criterion {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    outcomes.push(Outcome { id, name, pass, detail });
}

fn tiny_config(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        layers: 2,
        global_start: 2,
        hidden: 16,
        heads_local: 2,
        heads_global: 2,
        ffn_size: 32,
        vocab_size: vocab.len(),
        max_seq_len: 24,
        init_std: 0.2,
        ..Default::default()
    }
}

fn tiny_model(config: ModelConfig, seed: u64, scaling: FeatureScaling) -> Reranker<f64> {
    let vocab = Vocab::build(WORDS.iter().copied(), 1000);
    let params = ParamStore::init(&config, &mut ChaCha8Rng::seed_from_u64(seed));
    Reranker::new(config, params, vocab, scaling).unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> CandidateSet {
    let mut phrase = |len: usize| (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
    let query_text = phrase(2);
    let candidates = (0..n)
        .map(|i| Candidate {
            doc_id: format!("d{i}"),
            title: phrase(1),
            passage: phrase(2 + i % 5),
            retrieval_score: 165.0 + 3.0 * i as f64,
            first_stage_rank: i + 1,
        })
        .collect();
    CandidateSet { query_id: "q".into(), query_text, candidates }
}

fn criterion_1(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let vocab = Vocab::build(WORDS.iter().copied(), 1000);
    let config = tiny_config(&vocab);
    let model = tiny_model(config.clone(), 1, FeatureScaling::default());
    let set = random_set(&mut ChaCha8Rng::seed_from_u64(2), 3);
    let inputs = model.encode(&set, ScoreMode::Full).unwrap();
    let tf = [model.vocab.true_id(), model.vocab.false_id()];
    let targets = [true, false, false];
    let names: Vec<String> = model.params.names().map(String::from).collect();
    let tensors: Vec<Tensor<f64>> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    let errors = check_gradients(&tensors, 1e-5, |tape, vars| {
        let mut net = Network::bind(tape, &model.params, &config, false);
        for (n, v) in names.iter().zip(vars) {
            net.rebind(n, *v);
        }
        let fwd = net.forward(tape, &inputs, tf, true)?;
        true_false_loss(tape, fwd.logits, &targets)
    })
    .unwrap();
    let (worst, worst_name) =
        errors.iter().zip(&names).fold((0.0f64, ""), |(m, w), (e, n)| if *e > m { (*e, n.as_str()) } else { (m, w) });
    let secs = start.elapsed().as_secs_f64();
    report(
        out,
        1,
        "gradient integrity",
        worst < 1e-3 && secs < 120.0,
        format!("{} parameter groups, max rel. err {worst:.2e} ({worst_name}) < 1e-3, {secs:.1}s < 120s", names.len()),
    );
}

fn criterion_2(out: &mut Vec<Outcome>) {
    let vocab = Vocab::build(WORDS.iter().copied(), 1000);
    let fixed = FeatureScaling::Fixed(FeatureSpec::DENSE_RETRIEVER);
    let off = tiny_model(tiny_config(&vocab).without_global(), 3, fixed);
    let mut with_zero = tiny_model(tiny_config(&vocab), 4, fixed);
    with_zero.params.zero_global_output();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut joint_ok, mut zero_ok) = (true, true);
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let set = random_set(&mut rng, n);
        let joint = off.score(&set, ScoreMode::Full).unwrap();
        for (i, c) in set.candidates.iter().enumerate() {
            let single = CandidateSet { candidates: vec![c.clone()], ..set.clone() };
            joint_ok &= off.score(&single, ScoreMode::Full).unwrap()[0].to_bits() == joint[i].to_bits();
        }
        let full = with_zero.score(&set, ScoreMode::Full).unwrap();
        let no_global = with_zero.score(&set, ScoreMode::NoGlobal).unwrap();
        zero_ok &= full.iter().zip(&no_global).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    report(
        out,
        2,
        "mechanism-off identity",
        joint_ok && zero_ok,
        format!("l = L+1 joint == singleton bitwise: {joint_ok}; zero global output full == no_global bitwise: {zero_ok}"),
    );
}

fn criterion_3(out: &mut Vec<Outcome>) {
    let vocab = Vocab::build(WORDS.iter().copied(), 1000);
    let mut max_dev = 0.0f64;
    let mut all_bitwise = true;
    for seed in 0..100u64 {
        let model = tiny_model(tiny_config(&vocab), 1000 + seed, FeatureScaling::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=8);
        let set = random_set(&mut rng, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let base = model.score(&set, ScoreMode::Full).unwrap();
        let perm = model.score(&set.permuted(&order), ScoreMode::Full).unwrap();
        for (i, &o) in order.iter().enumerate() {
            max_dev = max_dev.max((perm[i] - base[o]).abs());
            all_bitwise &= perm[i].to_bits() == base[o].to_bits();
        }
    }
    report(
        out,
        3,
        "permutation equivariance",
        max_dev == 0.0 && all_bitwise,
        format!("100 seeds, max abs deviation {max_dev:e} (bitwise equal: {all_bitwise})"),
    );
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let spec = FeatureSpec::DENSE_RETRIEVER;
    let cases = [(165.0, 0), (190.0, 100), (177.5, 50), (200.0, 100)];
    let got: Vec<u32> = cases.iter().map(|&(raw, _)| discretize_feature(raw, &spec)).collect();
    let pass = cases.iter().zip(&got).all(|(c, g)| c.1 == *g);
    report(out, 6, "feature discretization", pass, format!("165, 190, 177.5, 200 -> {got:?} (want [0, 100, 50, 100])"));
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let inst = support::Instance::random(&mut rng);
        let (run, qrels) = inst.records("q", &mut ChaCha8Rng::seed_from_u64(i));
        let qrels = Qrels::from_records(&qrels);
        for threshold in [1, 2] {
            let got = |m| evaluate(&run, &qrels, m, threshold).mean;
            worst = worst
                .max((got(Metric::MrrAt(10)) - inst.reciprocal_rank(10, threshold)).abs())
                .max((got(Metric::Mrr) - inst.reciprocal_rank(usize::MAX, threshold)).abs())
                .max((got(Metric::Map) - inst.average_precision(threshold)).abs());
        }
        worst = worst.max((evaluate(&run, &qrels, Metric::NdcgAt(10), 0).mean - inst.ndcg(10)).abs());
    }
    let example = support::Instance { ranked: vec![("a".into(), 0), ("b".into(), 3), ("c".into(), 2)], unretrieved: vec![] };
    let (run, qrels) = example.records("q", &mut ChaCha8Rng::seed_from_u64(0));
    let ndcg = evaluate(&run, &Qrels::from_records(&qrels), Metric::NdcgAt(10), 0).mean;
    report(
        out,
        7,
        "metric oracles",
        worst < 1e-9 && (ndcg - 0.66531).abs() < 1e-5,
        format!("1000 instances, max abs diff {worst:.1e} < 1e-9; worked NDCG {ndcg:.5} (0.66531)"),
    );
}

fn criterion_8(out: &mut Vec<Outcome>) {
    const TERMS: &[&str] = &["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet"];
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut mismatches = 0;
    let mut searches = 0;
    for _ in 0..50 {
        let corpus = support::random_corpus(&mut rng, TERMS, 200);
        let index = InvertedIndex::build(&corpus).unwrap();
        for _ in 0..5 {
            let len = rng.random_range(1..=3);
            let query = (0..len).map(|_| TERMS[rng.random_range(0..TERMS.len())]).collect::<Vec<_>>().join(" ");
            let k = rng.random_range(1..=corpus.len() + 5);
            let got = index.search(&query, k, 0.9, 0.4);
            let want = support::bm25_scan(&corpus, &query, k, 0.9, 0.4);
            searches += 1;
            if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.0 != w.0 || g.1.to_bits() != w.1.to_bits()) {
                mismatches += 1;
            }
        }
    }
    report(out, 8, "BM25 oracle", mismatches == 0, format!("50 corpora, {searches} searches, {mismatches} differ from exhaustive scan"));
}

fn criterion_9(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (perfect, noise, qrels) = support::perfect_and_noise(&mut rng, 60, 12);
    let q = Qrels::from_records(&qrels);
    let joined = fusion::join_runs(&[&perfect, &noise], Some(&q), 1).unwrap();
    let fit = fusion::coordinate_ascent_fit(&["perfect".into(), "noise".into()], &joined, &FusionConfig::default()).unwrap();
    let fused = fusion::fused_run(&fit.model, &joined, "f").unwrap();
    let oracle = support::run_mrr10(&perfect, &qrels);
    let got = mrr_at_k(&fused, &q, 10, 1).mean;
    let monotone = fit.trace.windows(2).all(|w| w[1] >= w[0]);
    report(
        out,
        9,
        "coordinate-ascent fusion",
        (got - oracle).abs() < 1e-6 && monotone,
        format!("fused MRR@10 {got:.6} vs perfect feature {oracle:.6}; trace of {} steps nondecreasing: {monotone}", fit.trace.len()),
    );
}

/// Train/test split of one generated task, as used by the trained criteria.
struct Desk {
    train_sets: Vec<CandidateSet>,
    test_sets: Vec<CandidateSet>,
    train_qrels: Qrels,
    test_qrels: Qrels,
    vocab: Vocab,
    examples: Vec<TrainExample>,
    raw: setrank::synthgen::SynthData,
}

fn desk(spec: SynthSpec) -> Desk {
    let spec = SynthSpec { num_queries: 600, n: 8, seed: 7, ..spec };
    let data = generate(&spec).unwrap();
    let (train_data, test_data) = data.split(500);
    let train_sets = assemble_candidate_sets(&train_data.run, &train_data.corpus, &train_data.queries, 8).unwrap();
    let test_sets = assemble_candidate_sets(&test_data.run, &test_data.corpus, &test_data.queries, 8).unwrap();
    let train_qrels = Qrels::from_records(&train_data.qrels);
    let test_qrels = Qrels::from_records(&test_data.qrels);
    let texts: Vec<String> = train_data
        .corpus
        .iter()
        .map(|d| format!("{} {}", d.title, d.text))
        .chain(train_data.queries.iter().map(|q| q.text.clone()))
        .collect();
    let vocab = Vocab::build(texts.iter().map(String::as_str), 8192);
    let examples = make_examples(&train_sets, &train_qrels, 1);
    Desk { train_sets, test_sets, train_qrels, test_qrels, vocab, examples, raw: data }
}

fn desk_config(vocab: &Vocab, max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        layers: 4,
        global_start: 3,
        hidden: 64,
        vocab_size: vocab.len(),
        max_seq_len,
        init_std: 0.125,
        ..Default::default()
    }
}

/// The desk schedule: 2000 warm-up steps without the feature, then 200 with
/// it. Returns the model after each phase and the training time in seconds.
fn two_phase<T: Scalar>(config: ModelConfig, d: &Desk, scaling: FeatureScaling) -> (Reranker<T>, Reranker<T>, f64) {
    let start = Instant::now();
    let params = ParamStore::<T>::init(&config, &mut ChaCha8Rng::seed_from_u64(7));
    let mut model = Reranker::new(config, params, d.vocab.clone(), scaling).unwrap();
    let base = TrainConfig { learning_rate: 1e-4, batch: 4, eval_every: 0, ..Default::default() };
    let warm = TrainConfig { phase: Phase::Warmup, steps: 2000, seed: 7, ..base.clone() };
    train(&mut model, &d.examples, &warm, None, None).unwrap();
    let warmed = model.clone();
    let feature = TrainConfig { phase: Phase::Feature, steps: 200, seed: 8, ..base };
    train(&mut model, &d.examples, &feature, None, None).unwrap();
    (warmed, model, start.elapsed().as_secs_f64())
}

fn test_mrr<T: Scalar>(model: &Reranker<T>, sets: &[CandidateSet], qrels: &Qrels, mode: ScoreMode) -> f64 {
    mrr_at_k(&rerank_run(model, sets, mode, "t").unwrap(), qrels, 10, 1).mean
}

fn first_stage_run(sets: &[CandidateSet]) -> Vec<RunRecord> {
    sets.iter()
        .flat_map(|s| {
            s.candidates.iter().map(move |c| RunRecord {
                query_id: s.query_id.clone(),
                doc_id: c.doc_id.clone(),
                rank: c.first_stage_rank,
                score: c.retrieval_score,
                tag: "first".into(),
            })
        })
        .collect()
}

fn criterion_4(out: &mut Vec<Outcome>) -> (Reranker<f32>, Desk) {
    let d = desk(SynthSpec::new(Task::Comparative));
    let config = desk_config(&d.vocab, 18);
    let (_, full, t_full) = two_phase::<f32>(config.clone(), &d, FeatureScaling::default());
    let (_, pointwise, t_point) = two_phase::<f32>(config.without_global(), &d, FeatureScaling::default());
    let full_mrr = test_mrr(&full, &d.test_sets, &d.test_qrels, ScoreMode::Full);
    let point_mrr = test_mrr(&pointwise, &d.test_sets, &d.test_qrels, ScoreMode::Full);
    let ceiling = pointwise_ceiling(8, 1, SynthSpec::default().scale_len, 10);
    let secs = t_full + t_point;
    let pass = full_mrr >= 0.85 && point_mrr <= 0.60 && point_mrr < ceiling && full_mrr - point_mrr >= 0.2 && secs < 1800.0;
    report(
        out,
        4,
        "comparative-task separation",
        pass,
        format!(
            "full {full_mrr:.4} >= 0.85; no_global {point_mrr:.4} <= 0.60 and < ceiling {ceiling:.4}; margin {:.4} >= 0.2; {secs:.0}s < 1800s",
            full_mrr - point_mrr
        ),
    );
    (full, d)
}

fn criterion_5(out: &mut Vec<Outcome>) -> FusionModel {
    let d = desk(SynthSpec::new(Task::Pointwise));
    let scaling = FeatureScaling::Fixed(FeatureSpec { buckets: 5, ..FeatureSpec::DENSE_RETRIEVER });
    let (warm, full, secs) = two_phase::<f32>(desk_config(&d.vocab, 24), &d, scaling);
    let full_mrr = test_mrr(&full, &d.test_sets, &d.test_qrels, ScoreMode::Full);
    let nf_mrr = test_mrr(&warm, &d.test_sets, &d.test_qrels, ScoreMode::NoFeature);

    let names = vec!["reranker".to_string(), "first_stage".to_string()];
    let train_nf = rerank_run(&warm, &d.train_sets, ScoreMode::NoFeature, "nf").unwrap();
    let train_first = first_stage_run(&d.train_sets);
    let train_q = fusion::join_runs(&[&train_nf, &train_first], Some(&d.train_qrels), 1).unwrap();
    let fit = fusion::coordinate_ascent_fit(&names, &train_q, &FusionConfig::default()).unwrap();
    let test_nf = rerank_run(&warm, &d.test_sets, ScoreMode::NoFeature, "nf").unwrap();
    let test_first = first_stage_run(&d.test_sets);
    let test_q = fusion::join_runs(&[&test_nf, &test_first], None, 1).unwrap();
    let fused = fusion::fused_run(&fit.model, &test_q, "fused").unwrap();
    let fusion_mrr = mrr_at_k(&fused, &d.test_qrels, 10, 1).mean;
    let first_mrr = mrr_at_k(&test_first, &d.test_qrels, 10, 1).mean;
    report(
        out,
        5,
        "ablation ordering",
        full_mrr >= nf_mrr - 0.01 && full_mrr >= fusion_mrr - 0.01,
        format!(
            "full {full_mrr:.4} vs no_feature {nf_mrr:.4} and fusion {fusion_mrr:.4} (first stage {first_mrr:.4}); {secs:.0}s"
        ),
    );
    fit.model
}

fn criterion_10(out: &mut Vec<Outcome>, model: &Reranker<f32>) {
    // held-out sets with two relevant candidates, so label-1 pairs exist
    let spec = SynthSpec { num_queries: 100, seed: 1007, relevant: 2, ..SynthSpec::new(Task::Comparative) };
    let data = generate(&spec).unwrap();
    let sets = assemble_candidate_sets(&data.run, &data.corpus, &data.queries, 8).unwrap();
    let qrels = Qrels::from_records(&data.qrels);
    let mut records = Vec::new();
    let mut oracle_err = 0.0f64;
    for set in &sets {
        let (_, traces) = model.score_traced(set, ScoreMode::Full).unwrap();
        let labels: Vec<u32> = set.candidates.iter().map(|c| qrels.grade(&set.query_id, &c.doc_id)).collect();
        let recs = attention_records(&set.query_id, &traces, &labels).unwrap();
        for r in &recs {
            let t = traces.iter().find(|t| t.layer == r.layer).unwrap();
            let row = |i: usize| t.attended.row(i).iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
            oracle_err = oracle_err.max((support::cosine(&row(r.i), &row(r.k)).clamp(-1.0, 1.0) - r.similarity).abs());
        }
        records.extend(recs);
    }
    let layers: BTreeSet<usize> = records.iter().map(|r| r.layer).collect();
    let want_layers: BTreeSet<usize> = model.config.global_layers().collect();

    let summary = summarize_attention(&records);
    let mut order_ok = true;
    let by_layer: BTreeMap<usize, Vec<f64>> = summary.iter().fold(BTreeMap::new(), |mut m, s| {
        m.entry(s.layer).or_insert_with(Vec::new).extend(s.per_query.values().copied());
        m
    });
    for values in by_layer.values() {
        let norm = normalize_layer(values);
        for i in 0..values.len() {
            for j in 0..values.len() {
                order_ok &= values[i].total_cmp(&values[j]) == norm[i].total_cmp(&norm[j]);
            }
        }
    }
    let last = model.config.layers;
    let pick = |r1, r2| summary.iter().find(|s| s.layer == last && s.r1 == r1 && s.r2 == r2).map(|s| s.normalized_mean());
    let (same, cross) = (pick(1, 1).unwrap_or(f64::NAN), pick(0, 1).unwrap_or(f64::NAN));
    report(
        out,
        10,
        "attention analysis",
        oracle_err <= 1e-10 && layers == want_layers && order_ok && same > cross,
        format!(
            "cosine oracle max diff {oracle_err:.1e}; layers {layers:?}; min-max order-preserving: {order_ok}; layer {last} normalized mean label-1 pairs {same:.4} > label-1/label-0 {cross:.4}"
        ),
    );
}

fn criterion_11(out: &mut Vec<Outcome>, model: &Reranker<f32>, desk: &Desk, fusion_model: &FusionModel) {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let mut check = |what: &str, first: Vec<u8>, second: Vec<u8>| {
        if first != second {
            failures.push(what.to_string());
        }
    };

    let run_text = format_run(&desk.raw.run);
    check("run", run_text.clone().into_bytes(), format_run(&parse_run(&run_text, "run").unwrap()).into_bytes());
    let qrels_text = format_qrels(&desk.raw.qrels);
    check("qrels", qrels_text.clone().into_bytes(), format_qrels(&parse_qrels(&qrels_text, "qrels").unwrap()).into_bytes());

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    model.save(&a).unwrap();
    Reranker::<f32>::load(&a).unwrap().save(&b).unwrap();
    for file in ["params.ckpt", "model.cfg", "vocab.txt"] {
        check(file, std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
    }
    let vocab_text = desk.vocab.to_text();
    check("vocab", vocab_text.clone().into_bytes(), Vocab::from_text(&vocab_text).unwrap().to_text().into_bytes());
    let fusion_path = dir.path().join("fusion.model");
    fusion_model.save(&fusion_path).unwrap();
    let fusion_again = dir.path().join("fusion2.model");
    FusionModel::load(&fusion_path).unwrap().save(&fusion_again).unwrap();
    check("fusion", std::fs::read(&fusion_path).unwrap(), std::fs::read(&fusion_again).unwrap());

    report(
        out,
        11,
        "round-trips",
        failures.is_empty(),
        if failures.is_empty() {
            "run, qrels, checkpoint (params, config, vocab), vocab and fusion files byte-identical".into()
        } else {
            format!("differs: {}", failures.join(", "))
        },
    );
}

fn main() {
    let start = Instant::now();
    let mut out = Vec::new();
    criterion_1(&mut out);
    criterion_2(&mut out);
    criterion_3(&mut out);
    let (comparative_model, comparative_desk) = criterion_4(&mut out);
    let fusion_model = criterion_5(&mut out);
    criterion_6(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);
    criterion_9(&mut out);
    criterion_10(&mut out, &comparative_model);
    criterion_11(&mut out, &comparative_model, &comparative_desk, &fusion_model);

    out.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = out.iter().filter(|o| !o.pass).collect();
    println!("acceptance: {}/{} criteria passed in {:.0}s", out.len() - failed.len(), out.len(), start.elapsed().as_secs_f64());
    for o in &failed {
        println!("  failed: {} {} ({})", o.id, o.name, o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
