use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setrank::analysis::{self, svg, AttentionRecord};
use setrank::fusion::{self, FusionConfig, FusionModel};
use setrank::metrics::{evaluate, report_csv, Metric, Qrels};
use setrank::model::{parse_scaling, stored_dtype, CandidateSet, ModelConfig, ParamStore, Reranker, ScoreMode};
use setrank::retrieval::{
    assemble_candidate_sets, read_corpus, read_qrels, read_queries, read_run, write_run, InvertedIndex, RunRecord,
    DEFAULT_B, DEFAULT_K1,
};
use setrank::synthgen::{self, generate, SynthSpec, Task};
use setrank::textproc::{FeatureScaling, Vocab};
use setrank::training::{make_examples, train, CheckpointSink, Phase, TrainConfig, TrainExample, Validation};
use setrank::Scalar;

use crate::settings::Settings;
use crate::{
    AnalyzeCommand, Command, EvalArgs, FuseApplyArgs, FuseCommand, FuseFitArgs, IndexBuildArgs, IndexCommand,
    PlotArgs, RerankArgs, SearchArgs, SynthArgs, SynthCommand, TrainArgs,
};

pub fn dispatch(s: &Settings, threads: usize, command: Command) -> Result<()> {
    match command {
        Command::Index(IndexCommand::Build(a)) => index_build(s, a),
        Command::Index(IndexCommand::Search(a)) | Command::Search(a) => search(s, a),
        Command::Synth(SynthCommand::Generate(a)) => synth(s, a),
        Command::Train(a) => train_cmd(s, a),
        Command::Rerank(a) => rerank(s, threads, a),
        Command::Eval(a) => eval(s, a),
        Command::Fuse(FuseCommand::Fit(a)) => fuse_fit(s, a),
        Command::Fuse(FuseCommand::Apply(a)) => fuse_apply(s, a),
        Command::Analyze(AnalyzeCommand::Attention(a)) => {
            let input = s.require_path(a.attention, "attention")?;
            let out = s.require_path(a.out_csv, "out_csv")?;
            let records = analysis::parse_attention_csv(&read(&input)?, &input.display().to_string())?;
            let summary = analysis::summarize_attention(&records);
            write(&out, &analysis::summary_csv(&summary))?;
            for row in &summary {
                println!("layer {} ({},{}) mean {:.6} normalized {:.6}", row.layer, row.r1, row.r2, row.mean(), row.normalized_mean());
            }
            Ok(())
        }
        Command::Analyze(AnalyzeCommand::Scores(a)) => {
            let run = read_run(&s.require_path(a.run, "run")?)?;
            let qrels = Qrels::from_records(&read_qrels(&s.require_path(a.qrels, "qrels")?)?);
            let (rows, summary) = analysis::export_score_distribution(&run, &qrels);
            write(&s.require_path(a.out_csv, "out_csv")?, &analysis::scores_csv(&rows))?;
            let text = analysis::grade_summary_csv(&summary);
            if let Some(p) = s.path(a.out_summary, "out_summary")? {
                write(&p, &text)?;
            }
            print!("{text}");
            Ok(())
        }
        Command::Plot(a) => plot(s, a),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_run_file(path: &Path, run: &[RunRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(write_run(path, run)?)
}

fn index_build(s: &Settings, a: IndexBuildArgs) -> Result<()> {
    let corpus = s.require_path(a.corpus, "corpus")?;
    let out = s.require_path(a.out, "out")?;
    let index = InvertedIndex::build(&read_corpus(&corpus)?).with_context(|| format!("indexing {}", corpus.display()))?;
    write(&out, &index.to_text())?;
    println!("indexed {} documents, average length {:.2}", index.doc_count(), index.avg_doc_length());
    Ok(())
}

fn search(s: &Settings, a: SearchArgs) -> Result<()> {
    let index = match (s.path(a.index, "index")?, s.path(a.corpus, "corpus")?) {
        (Some(p), _) => InvertedIndex::load(&p)?,
        (None, Some(c)) => InvertedIndex::build(&read_corpus(&c)?).with_context(|| format!("indexing {}", c.display()))?,
        (None, None) => bail!("search needs --index or --corpus"),
    };
    let queries = read_queries(&s.require_path(a.queries, "queries")?)?;
    let k = s.or(a.k, "k", 1000)?;
    let k1 = s.or(a.k1, "k1", DEFAULT_K1)?;
    let b = s.or(a.b, "b", DEFAULT_B)?;
    let tag = s.or(a.tag, "tag", "bm25".to_string())?;
    let run = index.search_run(&queries, k, k1, b, &tag);
    write_run_file(&s.require_path(a.out_run, "out_run")?, &run)?;
    println!("{} queries, {} results", queries.len(), run.len());
    Ok(())
}

fn synth(s: &Settings, a: SynthArgs) -> Result<()> {
    let task: Task = s.or(a.task, "task", "comparative".to_string())?.parse()?;
    let d = SynthSpec::new(task);
    let train_queries = s.or(a.queries, "queries", d.num_queries)?;
    let test_queries = s.or(a.test_queries, "test_queries", 0)?;
    let spec = SynthSpec {
        task,
        num_queries: train_queries + test_queries,
        n: s.or(a.n, "n", d.n)?,
        seed: s.or(a.seed, "seed", d.seed)?,
        distractors: s.or(a.distractors, "distractors", d.distractors)?,
        answer_pool: s.or(a.answer_pool, "answer_pool", d.answer_pool)?,
        relevant: s.or(a.relevant, "relevant", d.relevant)?,
        scale_len: s.or(a.scale_len, "scale_len", d.scale_len)?,
        passage_len: s.or(a.passage_len, "passage_len", d.passage_len)?,
    };
    let out = s.require_path(a.out_dir, "out_dir")?;
    let data = generate(&spec)?;
    if test_queries > 0 {
        let (train, test) = data.split(train_queries);
        train.write(&out.join("train"))?;
        test.write(&out.join("test"))?;
        println!("{} train and {} test queries written to {}", train.queries.len(), test.queries.len(), out.display());
    } else {
        data.write(&out)?;
        println!("{} queries written to {}", data.queries.len(), out.display());
    }
    if task == Task::Comparative {
        println!("pointwise MRR@10 ceiling {:.6}", synthgen::pointwise_ceiling(spec.n, spec.relevant, spec.scale_len, 10));
    }
    Ok(())
}

/// Candidate sets and judgments from a directory in the generator layout.
fn load_data_dir(dir: &Path, n: usize) -> Result<(Vec<CandidateSet>, Qrels, Vec<String>)> {
    let corpus = read_corpus(&dir.join(synthgen::CORPUS_FILE))?;
    let queries = read_queries(&dir.join(synthgen::QUERIES_FILE))?;
    let run = read_run(&dir.join(synthgen::RUN_FILE))?;
    let qrels = Qrels::from_records(&read_qrels(&dir.join(synthgen::QRELS_FILE))?);
    let sets = assemble_candidate_sets(&run, &corpus, &queries, n).with_context(|| format!("assembling sets in {}", dir.display()))?;
    let texts = corpus
        .iter()
        .map(|d| format!("{} {}", d.title, d.text))
        .chain(queries.iter().map(|q| q.text.clone()))
        .collect();
    Ok((sets, qrels, texts))
}

fn train_cmd(s: &Settings, a: TrainArgs) -> Result<()> {
    let phase: Phase = s.or(a.phase, "phase", "warmup".to_string())?.parse()?;
    let data_dir = s.require_path(a.data_dir, "data_dir")?;
    let out = s.require_path(a.out, "out")?;
    let seed = s.or(a.seed, "seed", 0u64)?;
    let n = s.or(a.n, "n", 8usize)?;
    let base = match phase {
        Phase::Warmup => TrainConfig::default(),
        Phase::Feature => TrainConfig::feature_phase(),
    };
    let mut config = TrainConfig::from_kv(&s.kv, &base)?;
    config.phase = phase;
    config.seed = seed;

    let (sets, qrels, texts) = load_data_dir(&data_dir, n)?;
    let threshold = s.or(None, "rel_threshold", qrels.default_threshold())?;
    let examples = make_examples(&sets, &qrels, threshold);
    let val = match s.path(a.val_dir, "val_dir")? {
        Some(dir) => Some(load_data_dir(&dir, n)?),
        None => None,
    };
    let job = Job { examples: &examples, config: &config, val: val.as_ref().map(|(s, q, _)| (s.as_slice(), q)), threshold, out: &out };

    match s.path(a.init_checkpoint, "init_checkpoint")? {
        Some(dir) => match stored_dtype(&dir)?.as_str() {
            "f64" => job.run(Reranker::<f64>::load(&dir)?),
            _ => job.run(Reranker::<f32>::load(&dir)?),
        },
        None => {
            let mut model_config = ModelConfig::from_kv(&s.kv)?;
            let vocab = Vocab::build(texts.iter().map(String::as_str), model_config.vocab_size);
            model_config.vocab_size = vocab.len();
            let scaling = match s.kv.raw("scaling") {
                Some(text) => parse_scaling(text)?,
                None => FeatureScaling::default(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match s.or(a.dtype, "dtype", "f32".to_string())?.as_str() {
                "f32" => job.run(Reranker::new(model_config.clone(), ParamStore::<f32>::init(&model_config, &mut rng), vocab, scaling)?),
                "f64" => job.run(Reranker::new(model_config.clone(), ParamStore::<f64>::init(&model_config, &mut rng), vocab, scaling)?),
                other => bail!("unknown dtype {other}; expected f32 or f64"),
            }
        }
    }
}

struct Job<'a> {
    examples: &'a [TrainExample],
    config: &'a TrainConfig,
    val: Option<(&'a [CandidateSet], &'a Qrels)>,
    threshold: u32,
    out: &'a Path,
}

impl Job<'_> {
    fn run<T: Scalar>(&self, mut model: Reranker<T>) -> Result<()> {
        let val = self.val.map(|(sets, qrels)| Validation { sets, qrels, threshold: self.threshold });
        let sink = CheckpointSink { dir: self.out.to_path_buf() };
        let log = train(&mut model, self.examples, self.config, val.as_ref(), Some(&sink))?;
        self.config.to_kv().save(&self.out.join("train.cfg"))?;
        let last = log.last().expect("at least one step");
        print!("{} phase: {} steps, final loss {:.4}", self.config.phase.name(), last.step, last.loss);
        match log.iter().rev().find_map(|r| r.val_mrr10) {
            Some(v) => println!(", validation MRR@10 {v:.4}"),
            None => println!(),
        }
        Ok(())
    }
}

fn rerank(s: &Settings, threads: usize, a: RerankArgs) -> Result<()> {
    let checkpoint = s.require_path(a.checkpoint, "checkpoint")?;
    let run_in = read_run(&s.require_path(a.run_in, "run_in")?)?;
    let corpus = read_corpus(&s.require_path(a.corpus, "corpus")?)?;
    let queries = read_queries(&s.require_path(a.queries, "queries")?)?;
    let mode: ScoreMode = s.or(a.mode, "mode", "full".to_string())?.parse()?;
    let n = s.or(a.n, "n", 8usize)?;
    let out = s.require_path(a.out_run, "out_run")?;
    let dump = s.path(a.dump_attention, "dump_attention")?;
    let qrels = s.path(a.qrels, "qrels")?.map(|p| read_qrels(&p)).transpose()?.map(|r| Qrels::from_records(&r));
    let tag = s.or(a.tag, "tag", format!("setrank-{}", mode_name(mode)))?;
    let sets = assemble_candidate_sets(&run_in, &corpus, &queries, n)?;
    let job = RerankJob { sets: &sets, mode, tag: &tag, dump: dump.is_some(), qrels: qrels.as_ref(), threads };
    let (run, records) = match stored_dtype(&checkpoint)?.as_str() {
        "f64" => job.run(&Reranker::<f64>::load(&checkpoint)?)?,
        _ => job.run(&Reranker::<f32>::load(&checkpoint)?)?,
    };
    write_run_file(&out, &run)?;
    if let Some(path) = dump {
        if records.is_empty() {
            log::warn!("no global-attention layers ran; {} has a header only", path.display());
        }
        write(&path, &analysis::attention_csv(&records))?;
    }
    println!("re-ranked {} queries ({})", sets.len(), mode_name(mode));
    Ok(())
}

fn mode_name(mode: ScoreMode) -> &'static str {
    match mode {
        ScoreMode::Full => "full",
        ScoreMode::NoFeature => "no_feature",
        ScoreMode::NoGlobal => "no_global",
    }
}

struct RerankJob<'a> {
    sets: &'a [CandidateSet],
    mode: ScoreMode,
    tag: &'a str,
    dump: bool,
    qrels: Option<&'a Qrels>,
    threads: usize,
}

type Scored = (Vec<RunRecord>, Vec<AttentionRecord>);

impl RerankJob<'_> {
    fn one<T: Scalar>(&self, model: &Reranker<T>, set: &CandidateSet) -> Result<Scored> {
        let (scores, traces) = model.score_traced(set, self.mode)?;
        let run = setrank::training::run_from_scores(set, &scores, self.tag);
        let records = if self.dump {
            let labels: Vec<u32> =
                set.candidates.iter().map(|c| self.qrels.map_or(0, |q| q.grade(&set.query_id, &c.doc_id))).collect();
            analysis::attention_records(&set.query_id, &traces, &labels)?
        } else {
            Vec::new()
        };
        Ok((run, records))
    }

    /// Scores sets on up to `threads` workers; output order is the set order
    /// whatever the thread count.
    fn run<T: Scalar>(&self, model: &Reranker<T>) -> Result<Scored> {
        let chunk = self.sets.len().div_ceil(self.threads).max(1);
        let parts: Vec<Result<Vec<Scored>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .sets
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|set| self.one(model, set)).collect::<Result<Vec<_>>>()))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("worker panicked")))).collect()
        });
        let mut run = Vec::new();
        let mut records = Vec::new();
        for part in parts {
            for (r, a) in part? {
                run.extend(r);
                records.extend(a);
            }
        }
        Ok((run, records))
    }
}

fn eval(s: &Settings, a: EvalArgs) -> Result<()> {
    let run = read_run(&s.require_path(a.run, "run")?)?;
    let qrels = Qrels::from_records(&read_qrels(&s.require_path(a.qrels, "qrels")?)?);
    let metrics: Vec<Metric> = match s.opt(a.metrics, "metrics")? {
        Some(list) => list.split(',').filter(|m| !m.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?,
        None => Metric::DEFAULT.to_vec(),
    };
    let threshold = s.or(a.rel_threshold, "rel_threshold", qrels.default_threshold())?;
    let results: Vec<_> = metrics.iter().map(|&m| evaluate(&run, &qrels, m, threshold)).collect();
    if let Some(p) = s.path(a.out_csv, "out_csv")? {
        write(&p, &report_csv(&results))?;
    }
    for r in &results {
        println!("{}\tall\t{:.6}", r.metric.name(), r.mean);
    }
    Ok(())
}

/// `--run` values, or the comma-separated `run` config entry.
fn run_paths(s: &Settings, flags: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    if !flags.is_empty() {
        return Ok(flags);
    }
    let list: Vec<PathBuf> =
        s.kv.raw("run").unwrap_or_default().split(',').map(str::trim).filter(|p| !p.is_empty()).map(PathBuf::from).collect();
    if list.is_empty() {
        bail!("missing --run");
    }
    Ok(list)
}

fn read_runs(paths: &[PathBuf]) -> Result<Vec<Vec<RunRecord>>> {
    paths.iter().map(|p| Ok(read_run(p)?)).collect()
}

fn fuse_fit(s: &Settings, a: FuseFitArgs) -> Result<()> {
    let paths = run_paths(s, a.run)?;
    let names: Vec<String> = match s.opt(a.names, "names")? {
        Some(list) => list.split(',').map(|n| n.trim().to_string()).collect(),
        None => paths.iter().map(|p| p.file_stem().map_or("feature".into(), |f| f.to_string_lossy().into_owned())).collect(),
    };
    if names.len() != paths.len() {
        bail!("{} names for {} runs", names.len(), paths.len());
    }
    let qrels = Qrels::from_records(&read_qrels(&s.require_path(a.qrels, "qrels")?)?);
    let threshold = s.or(a.rel_threshold, "rel_threshold", qrels.default_threshold())?;
    let d = FusionConfig::default();
    let config = FusionConfig {
        steps: s.or(a.steps, "steps", d.steps)?,
        sweeps: s.or(a.sweeps, "sweeps", d.sweeps)?,
        restarts: s.or(a.restarts, "restarts", d.restarts)?,
        seed: s.or(a.seed, "seed", d.seed)?,
        k: d.k,
    };
    let runs = read_runs(&paths)?;
    let refs: Vec<&[RunRecord]> = runs.iter().map(Vec::as_slice).collect();
    let queries = fusion::join_runs(&refs, Some(&qrels), threshold)?;
    let report = fusion::coordinate_ascent_fit(&names, &queries, &config)?;
    let out = s.require_path(a.out, "out")?;
    write(&out, &report.model.to_text())?;
    println!("training MRR@10 {:.6}", report.objective);
    for (n, w) in report.model.names.iter().zip(&report.model.weights) {
        println!("{n}\t{w:.6}");
    }
    if report.degenerate {
        println!("warning: no weighting ranked a relevant candidate in the top 10; weights are uniform");
    }
    Ok(())
}

fn fuse_apply(s: &Settings, a: FuseApplyArgs) -> Result<()> {
    let model = FusionModel::load(&s.require_path(a.model, "model")?)?;
    let paths = run_paths(s, a.run)?;
    if paths.len() != model.names.len() {
        bail!("model has {} features but {} runs were given", model.names.len(), paths.len());
    }
    let runs = read_runs(&paths)?;
    let refs: Vec<&[RunRecord]> = runs.iter().map(Vec::as_slice).collect();
    let queries = fusion::join_runs(&refs, None, 1)?;
    let tag = s.or(a.tag, "tag", "fusion".to_string())?;
    let run = fusion::fused_run(&model, &queries, &tag)?;
    write_run_file(&s.require_path(a.out_run, "out_run")?, &run)?;
    println!("fused {} queries", queries.len());
    Ok(())
}

fn plot(s: &Settings, a: PlotArgs) -> Result<()> {
    let input = s.require_path(a.input, "input")?;
    let out = s.require_path(a.out, "out")?;
    let bins = s.or(a.bins, "bins", 20usize)?;
    let text = read(&input)?;
    let source = input.display().to_string();
    let header = text.lines().next().unwrap_or_default().trim();
    let title = |default: &str| s.or(a.title.clone(), "title", default.to_string());
    let svg = if header == analysis::SCORES_HEADER {
        let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for row in analysis::parse_scores_csv(&text, &source)? {
            groups.entry(row.grade).or_default().push(row.score);
        }
        let groups: Vec<(String, Vec<f64>)> = groups.into_iter().map(|(g, v)| (format!("grade {g}"), v)).collect();
        svg::histogram(&title("Scores by grade")?, &groups, bins)
    } else if header == analysis::SUMMARY_HEADER || header == analysis::ATTENTION_HEADER {
        let rows: Vec<(usize, String, f64)> = if header == analysis::SUMMARY_HEADER {
            analysis::parse_summary_csv(&text, &source)?
                .into_iter()
                .map(|r| (r.layer, format!("{}-{}", r.r1, r.r2), r.normalized))
                .collect()
        } else {
            let records = analysis::parse_attention_csv(&text, &source)?;
            analysis::summarize_attention(&records)
                .into_iter()
                .map(|r| (r.layer, format!("{}-{}", r.r1, r.r2), r.normalized_mean()))
                .collect()
        };
        let mut layers: Vec<usize> = rows.iter().map(|r| r.0).collect();
        layers.sort_unstable();
        layers.dedup();
        let mut cols: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
        cols.sort();
        cols.dedup();
        let cell: HashMap<(usize, &str), f64> = rows.iter().map(|(l, c, v)| ((*l, c.as_str()), *v)).collect();
        let values: Vec<Vec<Option<f64>>> =
            layers.iter().map(|&l| cols.iter().map(|c| cell.get(&(l, c.as_str())).copied()).collect()).collect();
        let row_names: Vec<String> = layers.iter().map(|l| format!("layer {l}")).collect();
        svg::heatmap(&title("Normalized attention similarity")?, &row_names, &cols, &values)
    } else {
        bail!("{source}: unrecognized CSV header {header:?}");
    };
    write(&out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
