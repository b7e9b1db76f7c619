//! Brute-force reference implementations shared by the integration tests.
//! They work on plain label triples and never touch the library's indexes.

#![allow(dead_code)]

use std::collections::BTreeSet;

use kgreason::kg::GraphBuilder;
use kgreason::KnowledgeGraph;
use rand::Rng;

pub type LabelTriple = (String, String, String);

pub struct SmallGraph {
    pub graph: KnowledgeGraph,
    pub triples: Vec<LabelTriple>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

/// At most 50 entities, 4 relations and 200 (possibly duplicate) triples.
pub fn small_graph(rng: &mut impl Rng) -> SmallGraph {
    let n_ent = rng.gen_range(1..=50);
    let n_rel = rng.gen_range(1..=4);
    let n_tri = rng.gen_range(0..=200);
    let mut triples = Vec::with_capacity(n_tri);
    for _ in 0..n_tri {
        triples.push((
            format!("e{}", rng.gen_range(0..n_ent)),
            format!("r{}", rng.gen_range(0..n_rel)),
            format!("e{}", rng.gen_range(0..n_ent)),
        ));
    }
    let mut b = GraphBuilder::new();
    for (h, r, t) in &triples {
        b.add(h, r, t);
    }
    let graph = b.build();
    let entities = graph.entity_vocab().labels().to_vec();
    let relations = graph.relation_vocab().labels().to_vec();
    SmallGraph {
        graph,
        triples,
        entities,
        relations,
    }
}

fn distinct(triples: &[LabelTriple]) -> Vec<&LabelTriple> {
    let set: BTreeSet<&LabelTriple> = triples.iter().collect();
    set.into_iter().collect()
}

/// Every walk `[e0, r1, e1, ...]` that starts in `starts` and follows `plan`.
pub fn brute_walks(triples: &[LabelTriple], starts: &[String], plan: &[String]) -> BTreeSet<Vec<String>> {
    fn extend(triples: &[&LabelTriple], plan: &[String], walk: &mut Vec<String>, out: &mut BTreeSet<Vec<String>>) {
        let step = (walk.len() - 1) / 2;
        if step == plan.len() {
            out.insert(walk.clone());
            return;
        }
        let cur = walk.last().unwrap().clone();
        for (h, r, t) in triples.iter().map(|t| (&t.0, &t.1, &t.2)) {
            if *h == cur && *r == plan[step] {
                walk.push(r.clone());
                walk.push(t.clone());
                extend(triples, plan, walk, out);
                walk.truncate(walk.len() - 2);
            }
        }
    }
    let triples = distinct(triples);
    let mut out = BTreeSet::new();
    for s in starts {
        extend(&triples, plan, &mut vec![s.clone()], &mut out);
    }
    out
}

/// Minimal walk length from any of `q` to any of `a` within `max_len`, and
/// the relation sequences of all walks of that length.
pub fn brute_shortest(
    triples: &[LabelTriple],
    q: &[String],
    a: &[String],
    max_len: usize,
) -> (Option<usize>, BTreeSet<Vec<String>>) {
    fn walks(
        triples: &[&LabelTriple],
        cur: &str,
        left: usize,
        rels: &mut Vec<String>,
        a: &[String],
        out: &mut BTreeSet<Vec<String>>,
    ) {
        if left == 0 {
            if a.iter().any(|x| x == cur) {
                out.insert(rels.clone());
            }
            return;
        }
        for t in triples {
            if t.0 == cur {
                rels.push(t.1.clone());
                walks(triples, &t.2, left - 1, rels, a, out);
                rels.pop();
            }
        }
    }
    let triples = distinct(triples);
    for len in 0..=max_len {
        let mut out = BTreeSet::new();
        for s in q {
            walks(&triples, s, len, &mut Vec::new(), a, &mut out);
        }
        if !out.is_empty() {
            return (Some(len), out);
        }
    }
    (None, BTreeSet::new())
}

/// All relation sequences of length `0..=max_len` over `relations`.
pub fn all_plans(relations: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &layer {
            for r in relations {
                let mut q: Vec<String> = p.clone();
                q.push(r.clone());
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

pub fn sample<T: Clone>(rng: &mut impl Rng, items: &[T], max: usize) -> Vec<T> {
    let n = rng.gen_range(1..=max.min(items.len()));
    (0..n).map(|_| items[rng.gen_range(0..items.len())].clone()).collect()
}

#[derive(Debug, PartialEq)]
pub struct RefScore {
    pub hits: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn norm(s: &str, fold: bool) -> String {
    let mut out = String::new();
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    if fold {
        out.to_lowercase()
    } else {
        out
    }
}

/// Macro-averaged scores over `(prediction, gold)` pairs.
pub fn reference_score(pairs: &[(Vec<String>, Vec<String>)], fold: bool) -> RefScore {
    let (mut h, mut p, mut r, mut f) = (0.0, 0.0, 0.0, 0.0);
    for (pred, gold) in pairs {
        let mut gs: Vec<String> = gold.iter().map(|x| norm(x, fold)).collect();
        gs.sort();
        gs.dedup();
        let mut ps: Vec<String> = pred.iter().map(|x| norm(x, fold)).collect();
        ps.sort();
        ps.dedup();
        let common = ps.iter().filter(|x| gs.binary_search(x).is_ok()).count() as f64;
        let prec = if ps.is_empty() { 0.0 } else { common / ps.len() as f64 };
        let rec = if gs.is_empty() { 0.0 } else { common / gs.len() as f64 };
        h += match pred.first() {
            Some(top) if gs.binary_search(&norm(top, fold)).is_ok() => 1.0,
            _ => 0.0,
        };
        p += prec;
        r += rec;
        f += if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
    }
    let n = if pairs.is_empty() { 1.0 } else { pairs.len() as f64 };
    RefScore {
        hits: h / n,
        precision: p / n,
        recall: r / n,
        f1: f / n,
    }
}
