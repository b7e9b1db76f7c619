//! Seeded synthetic graphs and question sets.
//!
//! Benchmark questions are generated by walking a random relation chain from
//! a topic entity; the gold answers are every entity the chain reaches. A
//! question is kept only when all of its answers sit at exactly the chain's
//! length from the topic entity, so the chain is a shortest connecting path.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphBuilder, KnowledgeGraph};
use crate::paths::{retrieve_reasoning_paths, shortest_relation_paths, RelationPath};
use crate::planning::QaInstance;

/// `Alice marry_to Bob`, `Bob father_of Charlie`.
pub fn family_example() -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    b.add("Alice", "marry_to", "Bob");
    b.add("Bob", "father_of", "Charlie");
    b.build()
}

/// [`family_example`] plus `Bob father_of Dora`.
pub fn extended_family() -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    b.add("Alice", "marry_to", "Bob");
    b.add("Bob", "father_of", "Charlie");
    b.add("Bob", "father_of", "Dora");
    b.build()
}

pub fn family_question() -> QaInstance {
    QaInstance {
        id: "family-1".into(),
        question: "Who is the child of Alice?".into(),
        question_entities: vec!["Alice".into()],
        answer_entities: vec!["Charlie".into()],
        hop_count: Some(2),
    }
}

/// Uniform random labeled triples over `e{i}` / `r{j}` labels. Duplicates
/// collapse, so the graph may hold slightly fewer than `triples`.
pub fn random_graph(rng: &mut impl Rng, entities: usize, relations: usize, triples: usize) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    let ent: Vec<String> = (0..entities).map(|i| format!("e{i}")).collect();
    let rel: Vec<String> = (0..relations).map(|i| format!("r{i}")).collect();
    for _ in 0..triples {
        let h = rng.gen_range(0..entities);
        let r = rng.gen_range(0..relations);
        let t = rng.gen_range(0..entities);
        b.add(&ent[h], &rel[r], &ent[t]);
    }
    b.build()
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub questions: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    pub max_answers: usize,
    /// Keep only questions whose shortest relation paths reach exactly the
    /// gold answers, so the gold terminals are the only endpoints.
    pub unique_endpoints: bool,
    pub seed: u64,
}

impl BenchmarkConfig {
    /// 10^4 triples, 500 questions, hops 1..=4.
    pub fn small(seed: u64) -> Self {
        BenchmarkConfig {
            entities: 3_000,
            relations: 40,
            triples: 10_000,
            questions: 500,
            min_hops: 1,
            max_hops: 4,
            max_answers: 10,
            unique_endpoints: true,
            seed,
        }
    }

    /// 10^6 triples, 1,000 questions, hops 1..=4.
    pub fn scale(seed: u64) -> Self {
        BenchmarkConfig {
            entities: 200_000,
            relations: 200,
            triples: 1_000_000,
            questions: 1_000,
            min_hops: 1,
            max_hops: 4,
            max_answers: 50,
            unique_endpoints: false,
            seed,
        }
    }
}

pub struct Benchmark {
    pub graph: KnowledgeGraph,
    pub questions: Vec<QaInstance>,
}

/// Hop distances from `source`, explored up to `limit` hops.
fn distances(g: &KnowledgeGraph, source: EntityId, limit: usize) -> HashMap<EntityId, usize> {
    let mut dist = HashMap::from([(source, 0)]);
    let mut frontier = vec![source];
    for d in 1..=limit {
        let mut next = Vec::new();
        for &u in &frontier {
            for (_, v) in g.out_edges(u) {
                dist.entry(v).or_insert_with(|| {
                    next.push(v);
                    d
                });
            }
        }
        frontier = next;
    }
    dist
}

fn try_question(
    g: &KnowledgeGraph,
    rng: &mut ChaCha8Rng,
    hops: usize,
    cfg: &BenchmarkConfig,
) -> Option<(EntityId, BTreeSet<EntityId>)> {
    let start = EntityId(rng.gen_range(0..g.num_entities()) as u32);
    let mut cur = start;
    let mut chain = Vec::with_capacity(hops);
    for _ in 0..hops {
        let edges: Vec<_> = g.out_edges(cur).collect();
        if edges.is_empty() {
            return None;
        }
        let (r, t) = edges[rng.gen_range(0..edges.len())];
        chain.push(r);
        cur = t;
    }
    let plan = RelationPath(chain);
    let reached = retrieve_reasoning_paths(g, &[start], &plan, 10_000).ok()?;
    if reached.truncated {
        return None;
    }
    let answers: BTreeSet<EntityId> = reached.paths.iter().map(|p| p.end()).collect();
    if answers.is_empty() || answers.len() > cfg.max_answers || answers.contains(&start) {
        return None;
    }
    let dist = distances(g, start, hops);
    if answers.iter().any(|a| dist.get(a) != Some(&hops)) {
        return None;
    }
    if cfg.unique_endpoints {
        let ans: Vec<EntityId> = answers.iter().copied().collect();
        let sp = shortest_relation_paths(g, &[start], &ans, hops, 10_000).ok()?;
        let mut ends = BTreeSet::new();
        for z in &sp.paths {
            let got = retrieve_reasoning_paths(g, &[start], z, 10_000).ok()?;
            ends.extend(got.paths.iter().map(|p| p.end()));
        }
        if ends != answers {
            return None;
        }
    }
    Some((start, answers))
}

pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if cfg.min_hops == 0 || cfg.min_hops > cfg.max_hops {
        return Err(Error::domain("hop range must satisfy 1 <= min_hops <= max_hops"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = random_graph(&mut rng, cfg.entities, cfg.relations, cfg.triples);
    if graph.num_entities() == 0 {
        return Err(Error::domain("benchmark graph is empty"));
    }
    let span = cfg.max_hops - cfg.min_hops + 1;
    let mut questions = Vec::with_capacity(cfg.questions);
    let budget = cfg.questions.max(1) * 2_000;
    let mut attempts = 0;
    while questions.len() < cfg.questions {
        attempts += 1;
        if attempts > budget {
            return Err(Error::domain(format!(
                "could only generate {} of {} questions",
                questions.len(),
                cfg.questions
            )));
        }
        let hops = cfg.min_hops + questions.len() % span;
        if let Some((start, answers)) = try_question(&graph, &mut rng, hops, cfg) {
            let idx = questions.len();
            questions.push(QaInstance {
                id: format!("syn-{idx:05}"),
                question: format!(
                    "synthetic {hops}-hop question {idx} about {}",
                    graph.entity_label(start)
                ),
                question_entities: vec![graph.entity_label(start).to_owned()],
                answer_entities: answers.iter().map(|&a| graph.entity_label(a).to_owned()).collect(),
                hop_count: Some(hops),
            });
        }
    }
    Ok(Benchmark { graph, questions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_deterministic() {
        let cfg = BenchmarkConfig {
            entities: 300,
            relations: 10,
            triples: 900,
            questions: 20,
            ..BenchmarkConfig::small(3)
        };
        let a = generate_benchmark(&cfg).unwrap();
        let b = generate_benchmark(&cfg).unwrap();
        assert_eq!(a.questions, b.questions);
        assert_eq!(a.questions.len(), 20);
        let hops: BTreeSet<_> = a.questions.iter().map(|q| q.hop_count.unwrap()).collect();
        assert_eq!(hops, (1..=4).collect());
    }

    #[test]
    fn bad_hop_range() {
        let cfg = BenchmarkConfig {
            min_hops: 3,
            max_hops: 2,
            ..BenchmarkConfig::small(1)
        };
        assert!(generate_benchmark(&cfg).is_err());
    }
}
