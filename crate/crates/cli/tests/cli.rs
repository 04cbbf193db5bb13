use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use setrank::retrieval::{format_run, read_qrels, read_queries, read_run, write_queries, write_run, Query, RunRecord};
use setrank_cli::run_from;

const TINY: &str = "layers = 2
global_start = 2
hidden = 16
heads_local = 2
heads_global = 2
ffn_size = 32
max_seq_len = 18
init_std = 0.125
learning_rate = 1e-4
steps = 3
eval_every = 0
scaling = fixed:165:190:100
";

fn cli(args: &[&str]) -> anyhow::Result<()> {
    run_from(std::iter::once("setrank").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Comparative data in `dir/train` and `dir/test`, and a tiny model trained
/// on it in `dir/model`.
fn tiny_setup(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    cli(&["synth", "generate", "--queries", "12", "--test-queries", "4", "--seed", "3", "--out-dir", p(&data)]).unwrap();
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let model = dir.join("model");
    cli(&["--config", p(&cfg), "train", "--data-dir", p(&data.join("train")), "--seed", "1", "--out", p(&model)]).unwrap();
    model
}

#[test]
fn eval_with_every_relevant_doc_first_gives_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.txt");
    let qrels = dir.path().join("qrels.txt");
    fs::write(&run, "1 Q0 a 1 2.0 t\n1 Q0 b 2 1.0 t\n2 Q0 c 1 5.0 t\n2 Q0 d 2 4.0 t\n").unwrap();
    fs::write(&qrels, "1 0 a 1\n1 0 b 0\n2 0 c 1\n").unwrap();
    let out = dir.path().join("eval.csv");
    cli(&["eval", "--run", p(&run), "--qrels", p(&qrels), "--metrics", "mrr@10,map", "--out-csv", p(&out)]).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("query_id,mrr@10,map"));
    assert_eq!(text.lines().last(), Some("all,1.000000,1.000000"));
}

#[test]
fn synth_generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        cli(&["synth", "generate", "--task", "pointwise", "--queries", "20", "--seed", "9", "--out-dir", p(&out)]).unwrap();
    }
    for f in ["corpus.tsv", "queries.tsv", "qrels.txt", "run.txt"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_setup(dir.path());
    let again = dir.path().join("again");
    let cfg = dir.path().join("tiny.cfg");
    let train_dir = dir.path().join("data").join("train");
    cli(&["--config", p(&cfg), "train", "--data-dir", p(&train_dir), "--seed", "1", "--out", p(&again)]).unwrap();
    assert_eq!(fs::read(model.join("params.ckpt")).unwrap(), fs::read(again.join("params.ckpt")).unwrap());

    // the feature phase continues from the checkpoint
    let feat = dir.path().join("feat");
    cli(&[
        "--config",
        p(&cfg),
        "train",
        "--phase",
        "feature",
        "--data-dir",
        p(&train_dir),
        "--init-checkpoint",
        p(&model),
        "--out",
        p(&feat),
    ])
    .unwrap();
    assert!(fs::read_to_string(feat.join("train.cfg")).unwrap().contains("phase = feature"));
}

#[test]
fn no_global_scores_do_not_depend_on_the_partition() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_setup(dir.path());
    let test = dir.path().join("data").join("test");
    let run = read_run(&test.join("run.txt")).unwrap();
    let queries = read_queries(&test.join("queries.tsv")).unwrap();

    // per-query feature scaling would tie each score to its set, so the
    // tiny config uses fixed bounds

    // split every query's candidates into two pseudo-queries with the same text
    let mut split_run = Vec::new();
    let mut split_queries = Vec::new();
    for q in &queries {
        let recs: Vec<&RunRecord> = run.iter().filter(|r| r.query_id == q.id).collect();
        for (half, part) in recs.chunks(recs.len().div_ceil(2)).enumerate() {
            let id = format!("{}-{half}", q.id);
            split_queries.push(Query { id: id.clone(), text: q.text.clone() });
            for (i, r) in part.iter().enumerate() {
                split_run.push(RunRecord { query_id: id.clone(), rank: i + 1, ..(*r).clone() });
            }
        }
    }
    write_run(&dir.path().join("split_run.txt"), &split_run).unwrap();
    write_queries(&dir.path().join("split_queries.tsv"), &split_queries).unwrap();

    let score = |run_in: &Path, queries: &Path, mode: &str, out: &str| -> Vec<(String, f64)> {
        let out = dir.path().join(out);
        let corpus = test.join("corpus.tsv");
        cli(&[
            "rerank", "--checkpoint", p(&model), "--run-in", p(run_in), "--corpus", p(&corpus), "--queries", p(queries),
            "--mode", mode, "--out-run", p(&out),
        ])
        .unwrap();
        let mut s: Vec<(String, f64)> = read_run(&out).unwrap().into_iter().map(|r| (r.doc_id, r.score)).collect();
        s.sort_by(|a, b| a.0.cmp(&b.0));
        s
    };
    let whole = score(&test.join("run.txt"), &test.join("queries.tsv"), "no_global", "a.txt");
    let parts = score(&dir.path().join("split_run.txt"), &dir.path().join("split_queries.tsv"), "no_global", "b.txt");
    assert_eq!(whole.len(), 32);
    assert_eq!(whole, parts);
    let whole = score(&test.join("run.txt"), &test.join("queries.tsv"), "full", "c.txt");
    let parts = score(&dir.path().join("split_run.txt"), &dir.path().join("split_queries.tsv"), "full", "d.txt");
    assert_ne!(whole, parts, "global attention should see the partition");
}

#[test]
fn full_pipeline_writes_readable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = tiny_setup(d);
    let test = d.join("data").join("test");
    let (run_in, corpus, queries, qrels) =
        (test.join("run.txt"), test.join("corpus.tsv"), test.join("queries.tsv"), test.join("qrels.txt"));
    let base = [
        "rerank", "--checkpoint", p(&model), "--run-in", p(&run_in), "--corpus", p(&corpus), "--queries", p(&queries),
    ];
    let one = d.join("one.txt");
    let three = d.join("three.txt");
    let att = d.join("att.csv");
    cli(&[&base[..], &["--out-run", p(&one), "--dump-attention", p(&att), "--qrels", p(&qrels)]].concat()).unwrap();
    cli(&[&base[..], &["--out-run", p(&three), "--threads", "3"]].concat()).unwrap();
    assert_eq!(fs::read(&one).unwrap(), fs::read(&three).unwrap());
    // written runs re-read and re-written byte-identically
    assert_eq!(format_run(&read_run(&one).unwrap()), fs::read_to_string(&one).unwrap());

    let dump = fs::read_to_string(&att).unwrap();
    assert!(dump.starts_with("query_id,layer,i,k,label_i,label_k,similarity\n"));
    // 4 queries, one global layer, 8 × 8 pairs
    assert_eq!(dump.lines().count(), 1 + 4 * 64);

    let summary = d.join("summary.csv");
    cli(&["analyze", "attention", "--attention", p(&att), "--out-csv", p(&summary)]).unwrap();
    assert!(fs::read_to_string(&summary).unwrap().starts_with("layer,R1,R2,mean,normalized\n2,0,0,"));
    let scores = d.join("scores.csv");
    cli(&["analyze", "scores", "--run", p(&one), "--qrels", p(&qrels), "--out-csv", p(&scores)]).unwrap();
    let rows = fs::read_to_string(&scores).unwrap().lines().count() - 1;
    assert_eq!(rows, read_qrels(&qrels).unwrap().len());
    for (input, out) in [(&summary, "a.svg"), (&scores, "b.svg"), (&att, "c.svg")] {
        cli(&["plot", "--input", p(input), "--out", p(&d.join(out))]).unwrap();
        assert!(fs::read_to_string(d.join(out)).unwrap().starts_with("<svg"));
    }

    let fusion = d.join("fusion.model");
    cli(&["fuse", "fit", "--run", p(&one), "--run", p(&run_in), "--qrels", p(&qrels), "--out", p(&fusion)]).unwrap();
    let fused = d.join("fused.txt");
    cli(&["fuse", "apply", "--model", p(&fusion), "--run", p(&one), "--run", p(&run_in), "--out-run", p(&fused)]).unwrap();
    assert_eq!(read_run(&fused).unwrap().len(), 32);
    let text = fs::read_to_string(&fusion).unwrap();
    assert_eq!(setrank::fusion::FusionModel::parse(&text, "f").unwrap().to_text(), text);
}

#[test]
fn index_file_and_search_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.tsv");
    let queries = d.join("queries.tsv");
    fs::write(&corpus, "a\t\tred apple pie\nb\tfruit\tgreen apple\nc\t\tblue sky\n").unwrap();
    fs::write(&queries, "1\tapple\n2\tsky blue\n").unwrap();
    let index = d.join("index.txt");
    cli(&["index", "build", "--corpus", p(&corpus), "--out", p(&index)]).unwrap();
    let reloaded = setrank::retrieval::InvertedIndex::load(&index).unwrap();
    assert_eq!(reloaded.to_text(), fs::read_to_string(&index).unwrap());

    let (r1, r2) = (d.join("r1.txt"), d.join("r2.txt"));
    cli(&["index", "search", "--index", p(&index), "--queries", p(&queries), "--k", "2", "--out-run", p(&r1)]).unwrap();
    cli(&["search", "--corpus", p(&corpus), "--queries", p(&queries), "--k", "2", "--out-run", p(&r2)]).unwrap();
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    let run = read_run(&r1).unwrap();
    assert_eq!(run.len(), 4);
    assert_eq!(run[2].doc_id, "c");
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("corpus.tsv"), "a\t\tx\nb\t\ty\nc\t\tx y\n").unwrap();
    fs::write(d.join("queries.tsv"), "1\tx\n").unwrap();
    let cfg = d.join("search.cfg");
    let out = d.join("run.txt");
    fs::write(&cfg, format!("corpus = {}\nqueries = {}\nk = 1\nout_run = {}\n", p(&d.join("corpus.tsv")), p(&d.join("queries.tsv")), p(&out)))
        .unwrap();
    cli(&["--config", p(&cfg), "search"]).unwrap();
    assert_eq!(read_run(&out).unwrap().len(), 1);
    cli(&["--config", p(&cfg), "search", "--k", "3"]).unwrap();
    assert_eq!(read_run(&out).unwrap().len(), 3);
}

#[test]
fn failures_exit_nonzero_and_name_the_input() {
    let exe = env!("CARGO_BIN_EXE_setrank");
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing-run.txt");
    let out = Command::new(exe).args(["eval", "--run", p(&missing), "--qrels", "q"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-run.txt"));

    let out = Command::new(exe).args(["eval", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());

    let bad = dir.path().join("bad-run.txt");
    fs::write(&bad, "1 Q0 a x 1.0 t\n").unwrap();
    let qrels = dir.path().join("qrels.txt");
    fs::write(&qrels, "1 0 a 1\n").unwrap();
    let out = Command::new(exe).args(["eval", "--run", p(&bad), "--qrels", p(&qrels)]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad-run.txt:1"), "{err}");

    let csv = dir.path().join("other.csv");
    fs::write(&csv, "a,b\n1,2\n").unwrap();
    let err = cli(&["plot", "--input", p(&csv), "--out", p(&dir.path().join("x.svg"))]).unwrap_err();
    assert!(err.to_string().contains("other.csv"));
    assert!(cli(&["search", "--queries", "q"]).unwrap_err().to_string().contains("--corpus"));
}
