//! Deterministic synthetic ranking tasks.
//!
//! * Pointwise: the relevant passage mentions the query's answer word. Hard
//!   distractors may mention it too; the first-stage score then separates
//!   them, since relevant documents draw their score from a higher band.
//! * Comparative: every passage carries one word from a scale. One candidate
//!   is a key, marked as such, that names the common word; all other
//!   candidates but a small odd group share that word, and the odd group is
//!   relevant. Seen alone, a passage gives no hint whether its word is the
//!   odd one, so any scorer that reads candidates in isolation is capped well
//!   below perfect ranking.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::retrieval::{
    write_corpus_tsv, write_qrels, write_queries, write_run, Document, QrelRecord, Query, RunRecord,
};

pub const CORPUS_FILE: &str = "corpus.tsv";
pub const QUERIES_FILE: &str = "queries.tsv";
pub const QRELS_FILE: &str = "qrels.txt";
pub const RUN_FILE: &str = "run.txt";

const ANSWERS: &[&str] = &[
    "amber", "anchor", "apricot", "badger", "basalt", "beacon", "birch", "bison", "bramble", "canyon", "cedar",
    "cobalt", "comet", "copper", "coral", "cricket", "crystal", "dahlia", "delta", "ember", "falcon", "fennel",
    "fjord", "garnet", "glacier", "granite", "harbor", "hazel", "heron", "indigo", "iris", "jasper", "juniper",
    "kestrel", "lagoon", "lantern", "lichen", "lotus", "maple", "marble", "meadow", "mesa", "nectar", "nickel",
    "oasis", "obsidian", "onyx", "orchid", "otter", "pebble",
];

const FILLER: &[&str] = &[
    "the", "a", "of", "near", "with", "and", "old", "new", "this", "that", "some", "every", "report", "note",
    "record", "story", "place", "thing", "part", "side", "day", "field", "house", "road", "town", "water",
];

const TITLES: &[&str] = &["overview", "summary", "entry", "notes", "digest", "brief", "profile", "article"];

/// Default magnitude scale for the comparative task.
pub const SCALE: &[&str] = &["tiny", "small", "modest", "medium", "large", "big", "huge", "giant"];

/// Marks the key candidate of a comparative set.
pub const KEY_MARKER: &str = "key";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Pointwise,
    Comparative,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(Task::Pointwise),
            "comparative" => Ok(Task::Comparative),
            _ => Err(Error::InvalidArgument(format!("unknown task {s}"))),
        }
    }
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub task: Task,
    pub num_queries: usize,
    /// Candidates per query.
    pub n: usize,
    pub seed: u64,
    /// Pointwise: non-relevant candidates that also contain the answer word.
    pub distractors: usize,
    /// Pointwise: number of answer words in use (a prefix of the built-in list).
    pub answer_pool: usize,
    /// Comparative: size of the relevant (odd) group. Sets hold one key, the
    /// odd group and `n - 1 - relevant` common candidates.
    pub relevant: usize,
    /// Comparative: number of scale words in use (a prefix of [`SCALE`]).
    pub scale_len: usize,
    /// Filler words per passage besides the signal word.
    pub passage_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::new(Task::Comparative)
    }
}

impl SynthSpec {
    /// Defaults for `task`, sized so that a small model trained for a few
    /// thousand steps generalizes instead of memorizing: comparative
    /// passages carry no filler, pointwise ones one word, and the pointwise
    /// task draws from 8 answers with 2 hard distractors per set.
    pub fn new(task: Task) -> Self {
        let pointwise = task == Task::Pointwise;
        Self {
            task,
            num_queries: 100,
            n: 8,
            seed: 0,
            distractors: if pointwise { 2 } else { 0 },
            answer_pool: 8,
            relevant: 1,
            scale_len: SCALE.len(),
            passage_len: if pointwise { 1 } else { 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self.task {
            Task::Pointwise => {
                if self.n < 2 {
                    return bad("pointwise task needs n ≥ 2".into());
                }
                if self.distractors >= self.n {
                    return bad(format!("{} distractors leave no room in sets of {}", self.distractors, self.n));
                }
                if self.answer_pool < 2 || self.answer_pool > ANSWERS.len() {
                    return bad(format!("answer_pool must lie in 2..={}", ANSWERS.len()));
                }
            }
            Task::Comparative => {
                if self.relevant == 0 || self.n < 2 * self.relevant + 2 {
                    return bad(format!(
                        "comparative task needs n ≥ 2·relevant + 2 (n = {}, relevant = {})",
                        self.n, self.relevant
                    ));
                }
                if self.scale_len < 2 || self.scale_len > SCALE.len() {
                    return bad(format!("scale_len must lie in 2..={}", SCALE.len()));
                }
            }
        }
        Ok(())
    }
}

/// Everything one generation run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub corpus: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Vec<QrelRecord>,
    pub run: Vec<RunRecord>,
}

fn filler(rng: &mut ChaCha8Rng, len: usize) -> Vec<&'static str> {
    (0..len).map(|_| *FILLER.choose(rng).expect("non-empty")).collect()
}

/// Filler with `word` inserted at a random position.
fn passage(rng: &mut ChaCha8Rng, len: usize, word: &str) -> String {
    let mut words = filler(rng, len);
    let at = rng.random_range(0..=words.len());
    words.insert(at, word);
    words.join(" ")
}

/// Maps a unit interval draw onto dense-retriever-like scores.
fn raw_score(u: f64) -> f64 {
    165.0 + 25.0 * u
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = SynthData { corpus: Vec::new(), queries: Vec::new(), qrels: Vec::new(), run: Vec::new() };
    // (odd, common) scale pairs are dealt from shuffled rounds over all
    // ordered pairs, so every word is the odd one equally often
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for qi in 0..spec.num_queries {
        let qid = format!("q{qi}");
        // (passage, grade, unit score) per candidate, before shuffling
        let mut cands: Vec<(String, u32, f64)> = Vec::with_capacity(spec.n);
        let query_text = match spec.task {
            Task::Pointwise => {
                let pool = &ANSWERS[..spec.answer_pool];
                let answer = *pool.choose(&mut rng).expect("non-empty");
                for j in 0..spec.n {
                    let (word, grade, u) = if j == 0 {
                        (answer, 1, rng.random_range(0.75..1.0))
                    } else if j <= spec.distractors {
                        (answer, 0, rng.random_range(0.0..0.5))
                    } else {
                        let other = loop {
                            let w = *pool.choose(&mut rng).expect("non-empty");
                            if w != answer {
                                break w;
                            }
                        };
                        (other, 0, rng.random_range(0.0..1.0))
                    };
                    cands.push((passage(&mut rng, spec.passage_len, word), grade, u));
                }
                format!("which passage mentions {answer}")
            }
            Task::Comparative => {
                if pairs.is_empty() {
                    let m = spec.scale_len;
                    pairs = (0..m).flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b))).collect();
                    pairs.shuffle(&mut rng);
                }
                let (a, b) = pairs.pop().expect("refilled above");
                let (odd, common) = (SCALE[a], SCALE[b]);
                for j in 0..spec.n {
                    let (text, grade) = if j == 0 {
                        (format!("{KEY_MARKER} {}", passage(&mut rng, spec.passage_len, common)), 0)
                    } else if j <= spec.relevant {
                        (passage(&mut rng, spec.passage_len, odd), 1)
                    } else {
                        (passage(&mut rng, spec.passage_len, common), 0)
                    };
                    cands.push((text, grade, rng.random_range(0.0..1.0)));
                }
                "find the odd one".to_string()
            }
        };
        cands.shuffle(&mut rng);
        let mut docs: Vec<(String, u32, f64)> = cands
            .into_iter()
            .enumerate()
            .map(|(j, (text, grade, u))| {
                let id = format!("{qid}d{j}");
                // titles of varying length keep the passage at no fixed position
                let words = rng.random_range(1..=3);
                let title = TITLES.choose_multiple(&mut rng, words).copied().collect::<Vec<_>>().join(" ");
                data.corpus.push(Document { id: id.clone(), title, text });
                data.qrels.push(QrelRecord { query_id: qid.clone(), doc_id: id.clone(), grade });
                (id, grade, raw_score(u))
            })
            .collect();
        docs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        for (r, (id, _, s)) in docs.into_iter().enumerate() {
            data.run.push(RunRecord { query_id: qid.clone(), doc_id: id, rank: r + 1, score: s, tag: "synth".into() });
        }
        data.queries.push(Query { id: qid, text: query_text });
    }
    Ok(data)
}

impl SynthData {
    /// Splits off the first `count` queries and everything belonging to them.
    pub fn split(&self, count: usize) -> (SynthData, SynthData) {
        let head: std::collections::HashSet<&str> =
            self.queries.iter().take(count).map(|q| q.id.as_str()).collect();
        let owner = |doc_id: &str| doc_id.split_once('d').map(|(q, _)| q.to_string()).unwrap_or_default();
        let part = |keep: bool| SynthData {
            corpus: self.corpus.iter().filter(|d| head.contains(owner(&d.id).as_str()) == keep).cloned().collect(),
            queries: self.queries.iter().filter(|q| head.contains(q.id.as_str()) == keep).cloned().collect(),
            qrels: self.qrels.iter().filter(|r| head.contains(r.query_id.as_str()) == keep).cloned().collect(),
            run: self.run.iter().filter(|r| head.contains(r.query_id.as_str()) == keep).cloned().collect(),
        };
        (part(true), part(false))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_corpus_tsv(&dir.join(CORPUS_FILE), &self.corpus)?;
        write_queries(&dir.join(QUERIES_FILE), &self.queries)?;
        write_qrels(&dir.join(QRELS_FILE), &self.qrels)?;
        write_run(&dir.join(RUN_FILE), &self.run)
    }
}

/// Reciprocal rank, averaged over uniformly random orderings, of the first
/// of `relevant` tied items among `tied` tied items placed after `before`
/// strictly better ones, with cutoff `k`.
fn tied_reciprocal_rank(before: usize, tied: usize, relevant: usize, k: usize) -> f64 {
    // P(first relevant at offset p) = C(tied-1-p, relevant-1) / C(tied, relevant)
    let choose = |n: usize, r: usize| -> f64 {
        if r > n {
            return 0.0;
        }
        (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    let total = choose(tied, relevant);
    (0..tied)
        .filter(|p| before + p < k)
        .map(|p| choose(tied - 1 - p, relevant - 1) / total / (before + p + 1) as f64)
        .sum()
}

/// Best expected MRR@k that a scorer reading each comparative candidate in
/// isolation can reach, by exhaustive search over all scoring rules.
///
/// The key is never relevant, so ranking it last is optimal. Among the other
/// candidates only the scale word differs in distribution, so a rule is an
/// ordered partition of the `scale_len` words into score levels; all of them
/// are tried, with every (odd, common) word pair equally likely, as the
/// generator deals them. Ties are resolved by the first-stage order, which is
/// random.
pub fn pointwise_ceiling(n: usize, relevant: usize, scale_len: usize, k: usize) -> f64 {
    let m = scale_len;
    let common = n - 1 - relevant;
    let above = tied_reciprocal_rank(0, relevant, relevant, k);
    let below = tied_reciprocal_rank(common, relevant, relevant, k);
    let tied = tied_reciprocal_rank(0, n - 1, relevant, k);
    let pairs = (m * (m - 1)) as f64;
    // compositions of m, one per bit pattern of the m - 1 gaps between words
    (0u64..1 << (m - 1))
        .map(|cuts| {
            let mut sizes = vec![1usize];
            for gap in 0..m - 1 {
                if cuts >> gap & 1 == 1 {
                    sizes.push(1);
                } else {
                    *sizes.last_mut().expect("non-empty") += 1;
                }
            }
            // ordered pairs within a level tie; across levels the odd word
            // is above for one order and below for the other
            let same: usize = sizes.iter().map(|s| s * (s - 1)).sum();
            let split = (m * (m - 1) - same) as f64 / 2.0;
            (split * (above + below) + same as f64 * tied) / pairs
        })
        .fold(0.0, f64::max)
}
