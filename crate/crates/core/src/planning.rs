//! Planner backends that propose ranked relation paths for a question.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{resolve_known, KnowledgeGraph};
use crate::llm::{ChatModel, Message};
use crate::paths::{parse_plan, shortest_relation_paths};

pub const QUESTION_SLOT: &str = "<Question>";

pub const PLANNING_TEMPLATE: &str =
    "Please generate a valid relation path that can be helpful for answering the following question: <Question>";

/// The planning template with the question substituted once. Slot markers
/// inside the question itself are left alone.
pub fn build_planning_prompt(question: &str) -> String {
    PLANNING_TEMPLATE.replacen(QUESTION_SLOT, question, 1)
}

/// A question with pre-linked topic entities and gold answers.
///
/// Field aliases accept the `q_entity`/`a_entity`/`hop` naming used by common
/// KGQA dumps.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    #[serde(default, alias = "q_entity")]
    pub question_entities: Vec<String>,
    #[serde(default, alias = "a_entity")]
    pub answer_entities: Vec<String>,
    #[serde(default, alias = "hop", skip_serializing_if = "Option::is_none")]
    pub hop_count: Option<usize>,
}

/// Ranked plans for one question. Plans are relation-label sequences; grounding
/// against a graph happens downstream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    pub question_id: String,
    pub plans: Vec<Vec<String>>,
    /// Per-plan log-probabilities, aligned with `plans`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl PlanSet {
    pub fn empty(question_id: &str) -> Self {
        PlanSet {
            question_id: question_id.to_owned(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    /// The first `k` plans (and scores).
    pub fn top(&self, k: usize) -> PlanSet {
        PlanSet {
            question_id: self.question_id.clone(),
            plans: self.plans.iter().take(k).cloned().collect(),
            scores: self.scores.as_ref().map(|s| s.iter().take(k).copied().collect()),
        }
    }
}

pub trait Planner: Send + Sync {
    fn plan(&self, qa: &QaInstance, k: usize) -> Result<PlanSet>;

    fn name(&self) -> &'static str;
}

/// Gold shortest relation paths for one question, in oracle rank order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldPlans {
    pub plans: Vec<Vec<String>>,
    pub distance: Option<usize>,
    pub truncated: bool,
    /// Question or answer labels missing from the graph.
    pub unresolved: bool,
}

/// Shortest relation paths between the question's entities and answers,
/// ranked by length and then lexicographically by label.
pub fn gold_plans(g: &KnowledgeGraph, qa: &QaInstance, max_len: usize, max_paths: usize) -> Result<GoldPlans> {
    let q = resolve_known(g, &qa.question_entities);
    let a = resolve_known(g, &qa.answer_entities);
    if q.is_empty() || a.is_empty() {
        return Ok(GoldPlans {
            unresolved: true,
            ..Default::default()
        });
    }
    let sp = shortest_relation_paths(g, &q, &a, max_len, max_paths)?;
    let mut plans: Vec<Vec<String>> = sp.paths.iter().map(|p| p.labels(g)).collect();
    plans.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
    Ok(GoldPlans {
        plans,
        distance: sp.distance,
        truncated: sp.truncated,
        unresolved: false,
    })
}

/// Returns gold shortest paths; isolates retrieval and aggregation from model quality.
pub struct OraclePlanner<'g> {
    pub graph: &'g KnowledgeGraph,
    pub max_len: usize,
    pub max_paths: usize,
}

impl<'g> OraclePlanner<'g> {
    pub fn new(graph: &'g KnowledgeGraph, max_len: usize) -> Self {
        OraclePlanner {
            graph,
            max_len,
            max_paths: crate::paths::DEFAULT_MAX_PATHS,
        }
    }
}

impl Planner for OraclePlanner<'_> {
    fn plan(&self, qa: &QaInstance, k: usize) -> Result<PlanSet> {
        let gold = gold_plans(self.graph, qa, self.max_len, self.max_paths)?;
        if gold.plans.is_empty() {
            log::debug!(
                "oracle planner: no connecting path for {} (unresolved={})",
                qa.id,
                gold.unresolved
            );
        }
        Ok(PlanSet {
            question_id: qa.id.clone(),
            plans: gold.plans.into_iter().take(k).collect(),
            scores: None,
        })
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Serves precomputed plans keyed by question id.
#[derive(Clone, Debug, Default)]
pub struct FilePlanner {
    by_id: HashMap<String, PlanSet>,
}

impl FilePlanner {
    pub fn new(sets: impl IntoIterator<Item = PlanSet>) -> Self {
        FilePlanner {
            by_id: sets.into_iter().map(|s| (s.question_id.clone(), s)).collect(),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(Self::new(crate::jsonl::read_jsonl_file::<PlanSet>(path)?))
    }
}

impl Planner for FilePlanner {
    fn plan(&self, qa: &QaInstance, k: usize) -> Result<PlanSet> {
        Ok(self
            .by_id
            .get(&qa.id)
            .map(|s| s.top(k))
            .unwrap_or_else(|| PlanSet::empty(&qa.id)))
    }

    fn name(&self) -> &'static str {
        "file"
    }
}

/// Asks a chat model for `k` plans and parses each reply.
///
/// Replies without a `<PATH>...</PATH>` span are dropped; plans naming unknown
/// relations are kept so their rate can be measured downstream. Duplicates keep
/// their best rank. Candidates are ranked by endpoint score when every
/// candidate carries one, otherwise by generation order.
pub struct LlmPlanner<'c> {
    pub client: &'c dyn ChatModel,
}

impl Planner for LlmPlanner<'_> {
    fn plan(&self, qa: &QaInstance, k: usize) -> Result<PlanSet> {
        if k == 0 {
            return Ok(PlanSet::empty(&qa.id));
        }
        let messages = [Message::user(build_planning_prompt(&qa.question))];
        let candidates = if self.client.supports_multiple_candidates() {
            self.client.complete(&messages, k)?
        } else {
            let mut all = Vec::with_capacity(k);
            for _ in 0..k {
                all.extend(self.client.complete(&messages, 1)?);
            }
            all
        };

        let mut parsed: Vec<(Vec<String>, Option<f64>)> = candidates
            .into_iter()
            .filter_map(|c| parse_plan(&c.text).ok().map(|labels| (labels, c.score)))
            .collect();
        let scored = !parsed.is_empty() && parsed.iter().all(|(_, s)| s.is_some_and(f64::is_finite));
        if scored {
            parsed.sort_by(|a, b| b.1.unwrap().total_cmp(&a.1.unwrap()));
        }
        let mut seen = HashSet::new();
        parsed.retain(|(labels, _)| seen.insert(labels.clone()));
        parsed.truncate(k);

        let scores = scored
            .then(|| parsed.iter().map(|(_, s)| s.unwrap()).collect::<Vec<f64>>())
            .filter(|s| s.iter().all(|&x| x <= 0.0));
        Ok(PlanSet {
            question_id: qa.id.clone(),
            plans: parsed.into_iter().map(|(l, _)| l).collect(),
            scores,
        })
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}

/// Samples plans from the relation vocabulary: a length uniform in
/// `1..=max_len`, then each relation uniform. Seeded per question so results
/// do not depend on scheduling.
pub struct RandomPlanner<'g> {
    pub graph: &'g KnowledgeGraph,
    pub max_len: usize,
    pub seed: u64,
}

fn question_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}

impl Planner for RandomPlanner<'_> {
    fn plan(&self, qa: &QaInstance, k: usize) -> Result<PlanSet> {
        let vocab = self.graph.relation_vocab().labels();
        if vocab.is_empty() || self.max_len == 0 {
            return Ok(PlanSet::empty(&qa.id));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(question_seed(self.seed, &qa.id));
        let mut plans: Vec<Vec<String>> = Vec::with_capacity(k);
        let mut attempts = 0;
        while plans.len() < k && attempts < k * 20 {
            attempts += 1;
            let len = rng.gen_range(1..=self.max_len);
            let plan: Vec<String> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
            if !plans.contains(&plan) {
                plans.push(plan);
            }
        }
        Ok(PlanSet {
            question_id: qa.id.clone(),
            plans,
            scores: None,
        })
    }

    fn name(&self) -> &'static str {
        "random"
    }
}

/// Planning loss with a uniform posterior over the gold plans:
/// `-(1/|gold|) * sum(logprob(z))`.
pub fn planning_loss<T>(gold: &[T], logprob: impl Fn(&T) -> f64) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::domain("planning loss needs at least one gold plan"));
    }
    let mut total = 0.0;
    for z in gold {
        let lp = logprob(z);
        if !lp.is_finite() || lp > 0.0 {
            return Err(Error::domain(format!(
                "log-probability must be finite and <= 0, got {lp}"
            )));
        }
        total += lp;
    }
    Ok(-total / gold.len() as f64)
}

/// Planning loss using the scores a planner attached to its plans. `None`
/// when scores are absent or some gold plan was not proposed.
pub fn planning_loss_from_scores(gold: &[Vec<String>], planned: &PlanSet) -> Option<f64> {
    let scores = planned.scores.as_ref()?;
    let lookup: HashMap<&Vec<String>, f64> = planned.plans.iter().zip(scores.iter().copied()).collect();
    if gold.iter().any(|z| !lookup.contains_key(z)) {
        return None;
    }
    planning_loss(gold, |z| lookup[z]).ok()
}
