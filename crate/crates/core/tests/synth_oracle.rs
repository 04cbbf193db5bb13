use std::collections::HashSet;

use setrank::synthgen::{generate, pointwise_ceiling, SynthSpec, Task, KEY_MARKER};

/// Dense ranks of `levels`, so equal weak orders compare equal.
fn canonical(levels: &[usize]) -> Vec<usize> {
    let mut distinct: Vec<usize> = levels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    levels.iter().map(|l| distinct.binary_search(l).unwrap()).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best expected MRR@10 of any rule that scores each candidate of an
/// (n = 4, one odd, scale 6) set by looking at it alone, by enumerating
/// every weak order over the key and the six scale words.
fn enumerated_ceiling() -> f64 {
    const M: usize = 6;
    let items = M + 1; // index M is the key
    let mut orders: HashSet<Vec<usize>> = HashSet::new();
    let mut f = vec![0usize; items];
    loop {
        orders.insert(canonical(&f));
        let mut i = 0;
        while i < items {
            f[i] += 1;
            if f[i] < items {
                break;
            }
            f[i] = 0;
            i += 1;
        }
        if i == items {
            break;
        }
    }
    assert_eq!(orders.len(), 47293); // ordered Bell number for 7 items
    let perms = permutations(4);
    let mut best: f64 = 0.0;
    for level in &orders {
        let mut total = 0.0;
        let mut count = 0usize;
        for odd in 0..M {
            for common in (0..M).filter(|&c| c != odd) {
                // candidates: key, odd, common, common
                let lv = [level[M], level[odd], level[common], level[common]];
                for p in &perms {
                    // p[c] is candidate c's first-stage position, which breaks ties
                    let ahead = (0..4).filter(|&c| c != 1 && (lv[c] > lv[1] || (lv[c] == lv[1] && p[c] < p[1]))).count();
                    total += 1.0 / (ahead + 1) as f64;
                    count += 1;
                }
            }
        }
        best = best.max(total / count as f64);
    }
    best
}

#[test]
fn pointwise_ceiling_matches_exhaustive_enumeration() {
    let oracle = enumerated_ceiling();
    assert!(oracle < 1.0);
    assert!((pointwise_ceiling(4, 1, 6, 10) - oracle).abs() < 1e-12, "{oracle}");
}

#[test]
fn set_aware_rule_is_perfect_on_generated_sets() {
    let spec = SynthSpec { num_queries: 200, seed: 4, relevant: 2, ..SynthSpec::new(Task::Comparative) };
    let data = generate(&spec).unwrap();
    let text = |id: &str| data.corpus.iter().find(|d| d.id == id).unwrap().text.clone();
    for q in &data.queries {
        let docs: Vec<_> = data.run.iter().filter(|r| r.query_id == q.id).collect();
        let key = docs.iter().map(|r| text(&r.doc_id)).find(|t| t.starts_with(KEY_MARKER)).unwrap();
        let common = key.trim_start_matches(KEY_MARKER).trim().to_string();
        for r in &docs {
            let t = text(&r.doc_id);
            let predicted = !t.starts_with(KEY_MARKER) && t != common;
            let grade = data.qrels.iter().find(|g| g.doc_id == r.doc_id).unwrap().grade;
            assert_eq!(predicted, grade == 1, "{}", r.doc_id);
        }
    }
}
