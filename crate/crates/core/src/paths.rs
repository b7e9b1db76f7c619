//! Relation paths (plans), reasoning paths (grounded walks), and the two graph
//! searches that connect them.
//!
//! [`retrieve_reasoning_paths`] instantiates a relation path as walks rooted at
//! the question entities. [`shortest_relation_paths`] goes the other way: it
//! finds the relation sequences of all minimal-length walks from question
//! entities to answer entities, which serve as supervision for planners.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub const PATH_START: &str = "<PATH>";
pub const PATH_SEP: &str = "<SEP>";
pub const PATH_END: &str = "</PATH>";

/// Default cap on reasoning paths retrieved for one plan and question.
pub const DEFAULT_MAX_PATHS: usize = 100_000;

/// Default maximum plan length considered during shortest-path extraction.
pub const DEFAULT_MAX_LEN: usize = 4;

/// An ordered relation sequence. The empty path means "the answer is the
/// question entity itself".
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationPath(pub Vec<RelationId>);

impl RelationPath {
    pub fn new(relations: Vec<RelationId>) -> Self {
        RelationPath(relations)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.0
    }

    pub fn labels(&self, g: &KnowledgeGraph) -> Vec<String> {
        self.0.iter().map(|&r| g.relation_label(r).to_owned()).collect()
    }
}

/// A walk `e0 -r1-> e1 -r2-> ... -rl-> el` rooted at a question entity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReasoningPath {
    pub start: EntityId,
    pub steps: Vec<(RelationId, EntityId)>,
}

impl ReasoningPath {
    pub fn end(&self) -> EntityId {
        self.steps.last().map_or(self.start, |&(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn relation_path(&self) -> RelationPath {
        RelationPath(self.steps.iter().map(|&(r, _)| r).collect())
    }

    /// True when every hop is a triple of `g`.
    pub fn validate(&self, g: &KnowledgeGraph) -> bool {
        let mut cur = self.start;
        if g.check_entity(cur).is_err() {
            return false;
        }
        for &(r, e) in &self.steps {
            match g.neighbors(cur, r) {
                Ok(tails) if tails.binary_search(&e).is_ok() => cur = e,
                _ => return false,
            }
        }
        true
    }

    /// `["e0", "r1", "e1", ...]`, the on-disk form.
    pub fn to_labels(&self, g: &KnowledgeGraph) -> Vec<String> {
        let mut out = Vec::with_capacity(1 + 2 * self.steps.len());
        out.push(g.entity_label(self.start).to_owned());
        for &(r, e) in &self.steps {
            out.push(g.relation_label(r).to_owned());
            out.push(g.entity_label(e).to_owned());
        }
        out
    }

    pub fn from_labels(g: &KnowledgeGraph, labels: &[String]) -> Result<Self> {
        if labels.len().is_multiple_of(2) {
            return Err(Error::domain(format!(
                "reasoning path must have an odd number of labels, got {}",
                labels.len()
            )));
        }
        let entity = |l: &String| g.entity_id(l).ok_or_else(|| Error::UnknownEntity(l.clone()));
        let start = entity(&labels[0])?;
        let mut steps = Vec::with_capacity(labels.len() / 2);
        for pair in labels[1..].chunks(2) {
            let r = g
                .relation_id(&pair[0])
                .ok_or_else(|| Error::UngroundedPlan(vec![pair[0].clone()]))?;
            steps.push((r, entity(&pair[1])?));
        }
        Ok(ReasoningPath { start, steps })
    }
}

/// Output of [`retrieve_reasoning_paths`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Retrieval {
    pub paths: Vec<ReasoningPath>,
    /// Set when the path cap was hit; `paths` is then incomplete.
    pub truncated: bool,
}

fn sorted_unique(entities: &[EntityId]) -> Vec<EntityId> {
    let mut v = entities.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Plan-constrained expansion: every walk of length `plan.len()` from a
/// question entity whose i-th edge carries `plan[i]`. Walks may revisit
/// entities. Results are sorted and unique.
pub fn retrieve_reasoning_paths(
    g: &KnowledgeGraph,
    question_entities: &[EntityId],
    plan: &RelationPath,
    max_paths: usize,
) -> Result<Retrieval> {
    for &e in question_entities {
        g.check_entity(e)?;
    }
    let unknown: Vec<String> = plan
        .relations()
        .iter()
        .filter(|r| g.check_relation(**r).is_err())
        .map(|r| format!("#{}", r.0))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UngroundedPlan(unknown));
    }

    let target = plan.len();
    let mut found = Vec::new();
    let mut truncated = false;
    // Depth-first over the plan-constrained expansion keeps memory at
    // O(depth * degree) and makes the cap count completed walks only.
    let mut stack: Vec<(EntityId, Vec<(RelationId, EntityId)>)> = sorted_unique(question_entities)
        .into_iter()
        .rev()
        .map(|e| (e, Vec::new()))
        .collect();
    'walks: while let Some((root, walk)) = stack.pop() {
        if walk.len() == target {
            if found.len() == max_paths {
                truncated = true;
                break 'walks;
            }
            found.push(ReasoningPath {
                start: root,
                steps: walk,
            });
            continue;
        }
        let cursor = walk.last().map_or(root, |&(_, e)| e);
        let relation = plan.relations()[walk.len()];
        for &t in g.tails(cursor, relation).iter().rev() {
            let mut next = Vec::with_capacity(walk.len() + 1);
            next.extend_from_slice(&walk);
            next.push((relation, t));
            stack.push((root, next));
        }
    }
    found.sort_unstable();
    found.dedup();
    Ok(Retrieval {
        paths: found,
        truncated,
    })
}

/// Grounds `plan_labels` against `g` and retrieves. An unknown relation label is
/// an [`Error::UngroundedPlan`], distinct from a grounded plan with no matches.
pub fn retrieve_by_labels(
    g: &KnowledgeGraph,
    question_entities: &[EntityId],
    plan_labels: &[String],
    max_paths: usize,
) -> Result<Retrieval> {
    let plan = ground_plan(plan_labels, g)?;
    retrieve_reasoning_paths(g, question_entities, &plan, max_paths)
}

/// Output of [`shortest_relation_paths`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShortestPaths {
    /// Distinct relation sequences of all minimal connecting walks, sorted by handle.
    pub paths: Vec<RelationPath>,
    /// Minimal hop distance, `None` when no answer is within `max_len`.
    pub distance: Option<usize>,
    pub truncated: bool,
}

/// Relation sequences of every minimal-length walk from any question entity to
/// any answer entity, with the minimum taken over all (question, answer) pairs.
///
/// Works on the layered DAG of shortest walks: a forward BFS fixes distances
/// from the question set, a backward sweep over the reverse index keeps only
/// vertices that lie on some minimal walk, and a final forward pass groups
/// walks by relation prefix so the cost scales with distinct prefixes rather
/// than with the number of walks.
pub fn shortest_relation_paths(
    g: &KnowledgeGraph,
    question_entities: &[EntityId],
    answer_entities: &[EntityId],
    max_len: usize,
    max_paths: usize,
) -> Result<ShortestPaths> {
    if question_entities.is_empty() || answer_entities.is_empty() {
        return Err(Error::domain("question and answer entity sets must be nonempty"));
    }
    for &e in question_entities.iter().chain(answer_entities) {
        g.check_entity(e)?;
    }
    let sources = sorted_unique(question_entities);
    let answers: HashSet<EntityId> = answer_entities.iter().copied().collect();
    if sources.iter().any(|e| answers.contains(e)) {
        return Ok(ShortestPaths {
            paths: vec![RelationPath::default()],
            distance: Some(0),
            truncated: false,
        });
    }

    // Forward BFS layers until the first layer touching an answer.
    let mut dist: HashMap<EntityId, usize> = sources.iter().map(|&e| (e, 0)).collect();
    let mut layers: Vec<Vec<EntityId>> = vec![sources.clone()];
    let mut depth = None;
    for d in 1..=max_len {
        let mut next = Vec::new();
        for &u in &layers[d - 1] {
            for (_, v) in g.out_edges(u) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                    slot.insert(d);
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        let hit = next.iter().any(|v| answers.contains(v));
        layers.push(next);
        if hit {
            depth = Some(d);
            break;
        }
    }
    let Some(d) = depth else {
        return Ok(ShortestPaths::default());
    };

    // Backward sweep: on_path[i] holds layer-i vertices that reach an answer in d - i steps.
    let mut on_path: Vec<HashSet<EntityId>> = vec![HashSet::new(); d + 1];
    on_path[d] = layers[d].iter().copied().filter(|v| answers.contains(v)).collect();
    for i in (0..d).rev() {
        let (before, after) = on_path.split_at_mut(i + 1);
        for &v in &after[0] {
            for (_, u) in g.in_edges(v) {
                if dist.get(&u) == Some(&i) {
                    before[i].insert(u);
                }
            }
        }
    }

    let mut groups: BTreeMap<Vec<RelationId>, BTreeSet<EntityId>> = BTreeMap::new();
    groups.insert(Vec::new(), on_path[0].iter().copied().collect());
    let mut truncated = false;
    for i in 0..d {
        let mut next: BTreeMap<Vec<RelationId>, BTreeSet<EntityId>> = BTreeMap::new();
        'expand: for (prefix, members) in &groups {
            for &u in members {
                for (r, v) in g.out_edges(u) {
                    if !on_path[i + 1].contains(&v) {
                        continue;
                    }
                    let mut key = Vec::with_capacity(prefix.len() + 1);
                    key.extend_from_slice(prefix);
                    key.push(r);
                    if !next.contains_key(&key) && next.len() == max_paths {
                        truncated = true;
                        break 'expand;
                    }
                    next.entry(key).or_default().insert(v);
                }
            }
        }
        groups = next;
    }

    Ok(ShortestPaths {
        paths: groups.into_keys().map(RelationPath).collect(),
        distance: Some(d),
        truncated,
    })
}

/// `<PATH> r1 <SEP> r2 </PATH>`; the empty path renders as `<PATH> </PATH>`.
pub fn serialize_plan<S: AsRef<str>>(labels: &[S]) -> String {
    if labels.is_empty() {
        return format!("{PATH_START} {PATH_END}");
    }
    let body: Vec<&str> = labels.iter().map(AsRef::as_ref).collect();
    format!("{PATH_START} {} {PATH_END}", body.join(&format!(" {PATH_SEP} ")))
}

/// Extracts the first well-delimited `<PATH> ... </PATH>` span and splits it
/// into trimmed relation labels.
pub fn parse_plan(text: &str) -> Result<Vec<String>> {
    let open = text
        .find(PATH_START)
        .ok_or_else(|| Error::PlanSyntax(format!("no {PATH_START} marker")))?;
    let after_open = open + PATH_START.len();
    let close_rel = text[after_open..]
        .find(PATH_END)
        .ok_or_else(|| Error::PlanSyntax(format!("no {PATH_END} after {PATH_START}")))?;
    let mut inner = &text[after_open..after_open + close_rel];
    // A nested opener means the earlier one was never closed; start from the last.
    if let Some(pos) = inner.rfind(PATH_START) {
        inner = &inner[pos + PATH_START.len()..];
    }
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    let labels: Vec<String> = inner.split(PATH_SEP).map(|s| s.trim().to_owned()).collect();
    if labels.iter().any(String::is_empty) {
        return Err(Error::PlanSyntax("empty relation name between separators".into()));
    }
    Ok(labels)
}

/// Maps labels to relation handles; every unknown label is reported.
pub fn ground_plan(labels: &[String], g: &KnowledgeGraph) -> Result<RelationPath> {
    let mut rels = Vec::with_capacity(labels.len());
    let mut unknown = Vec::new();
    for l in labels {
        match g.relation_id(l) {
            Some(r) => rels.push(r),
            None => unknown.push(l.clone()),
        }
    }
    if unknown.is_empty() {
        Ok(RelationPath(rels))
    } else {
        Err(Error::UngroundedPlan(unknown))
    }
}

/// Classification of free-form planner output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanClass {
    Grounded(RelationPath),
    Ungrounded { labels: Vec<String>, unknown: Vec<String> },
    Structural(String),
}

pub fn classify_plan(text: &str, g: &KnowledgeGraph) -> PlanClass {
    match parse_plan(text) {
        Err(e) => PlanClass::Structural(e.to_string()),
        Ok(labels) => match ground_plan(&labels, g) {
            Ok(path) => PlanClass::Grounded(path),
            Err(Error::UngroundedPlan(unknown)) => PlanClass::Ungrounded { labels, unknown },
            Err(e) => PlanClass::Structural(e.to_string()),
        },
    }
}

/// One line of the reasoning-paths JSONL file: the retrieved paths for one
/// question, each as `["e0", "r1", "e1", ...]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPaths {
    pub question_id: String,
    pub paths: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;

    fn family() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.add("Alice", "marry_to", "Bob");
        b.add("Bob", "father_of", "Charlie");
        b.add("Bob", "father_of", "Dora");
        b.build()
    }

    fn labels(g: &KnowledgeGraph, paths: &[ReasoningPath]) -> Vec<Vec<String>> {
        paths.iter().map(|p| p.to_labels(g)).collect()
    }

    fn rp(g: &KnowledgeGraph, names: &[&str]) -> RelationPath {
        RelationPath(names.iter().map(|n| g.relation_id(n).unwrap()).collect())
    }

    #[test]
    fn family_retrieval() {
        let g = family();
        let alice = g.entity_id("Alice").unwrap();
        let got = retrieve_reasoning_paths(&g, &[alice], &rp(&g, &["marry_to", "father_of"]), 100).unwrap();
        assert!(!got.truncated);
        assert_eq!(
            labels(&g, &got.paths),
            vec![
                vec!["Alice", "marry_to", "Bob", "father_of", "Charlie"],
                vec!["Alice", "marry_to", "Bob", "father_of", "Dora"],
            ]
        );
        assert!(got.paths.iter().all(|p| p.validate(&g)));
    }

    #[test]
    fn empty_plan_yields_start() {
        let g = family();
        let alice = g.entity_id("Alice").unwrap();
        let got = retrieve_reasoning_paths(&g, &[alice, alice], &RelationPath::default(), 100).unwrap();
        assert_eq!(
            got.paths,
            vec![ReasoningPath {
                start: alice,
                steps: vec![]
            }]
        );
    }

    #[test]
    fn ungrounded_differs_from_empty() {
        let g = family();
        let alice = g.entity_id("Alice").unwrap();
        let err = retrieve_by_labels(&g, &[alice], &["born_in".to_owned()], 10).unwrap_err();
        assert!(matches!(err, Error::UngroundedPlan(ref n) if n == &["born_in".to_owned()]));
        let none = retrieve_by_labels(&g, &[alice], &["father_of".to_owned()], 10).unwrap();
        assert!(none.paths.is_empty() && !none.truncated);
        assert!(matches!(
            retrieve_reasoning_paths(&g, &[alice], &RelationPath(vec![RelationId(9)]), 10),
            Err(Error::UngroundedPlan(_))
        ));
    }

    #[test]
    fn truncation_flag() {
        let g = family();
        let alice = g.entity_id("Alice").unwrap();
        let got = retrieve_reasoning_paths(&g, &[alice], &rp(&g, &["marry_to", "father_of"]), 1).unwrap();
        assert!(got.truncated);
        assert!(got.paths.len() <= 1);
    }

    #[test]
    fn shortest_family() {
        let g = family();
        let alice = g.entity_id("Alice").unwrap();
        let charlie = g.entity_id("Charlie").unwrap();
        let sp = shortest_relation_paths(&g, &[alice], &[charlie], 4, 1000).unwrap();
        assert_eq!(sp.distance, Some(2));
        assert_eq!(sp.paths, vec![rp(&g, &["marry_to", "father_of"])]);

        let same = shortest_relation_paths(&g, &[alice], &[alice], 4, 1000).unwrap();
        assert_eq!(same.paths, vec![RelationPath::default()]);
        assert_eq!(same.distance, Some(0));

        let unreachable = shortest_relation_paths(&g, &[charlie], &[alice], 4, 1000).unwrap();
        assert!(unreachable.paths.is_empty());
        assert_eq!(unreachable.distance, None);

        let too_short = shortest_relation_paths(&g, &[alice], &[charlie], 1, 1000).unwrap();
        assert_eq!(too_short.distance, None);
        assert!(shortest_relation_paths(&g, &[], &[alice], 4, 10).is_err());
    }

    #[test]
    fn serialize_format() {
        assert_eq!(
            serialize_plan(&["marry_to", "father_of"]),
            "<PATH> marry_to <SEP> father_of </PATH>"
        );
        assert_eq!(parse_plan(&serialize_plan::<&str>(&[])).unwrap(), Vec::<String>::new());
    }

    #[test]
    fn parse_free_text() {
        assert_eq!(
            parse_plan("answer: <PATH> location.country.official_language </PATH>").unwrap(),
            vec!["location.country.official_language"]
        );
        assert_eq!(
            parse_plan(
                "blah <PATH> sports.mascot.team <SEP> sports.sports_team.championships </PATH> <PATH> x </PATH>"
            )
            .unwrap(),
            vec!["sports.mascot.team", "sports.sports_team.championships"]
        );
        assert_eq!(parse_plan("<PATH> a <PATH>  b<SEP>c </PATH>").unwrap(), vec!["b", "c"]);
        assert!(matches!(parse_plan("no markers"), Err(Error::PlanSyntax(_))));
        assert!(matches!(parse_plan("<PATH> a <SEP> b"), Err(Error::PlanSyntax(_))));
        assert!(matches!(
            parse_plan("<PATH> a <SEP> <SEP> b </PATH>"),
            Err(Error::PlanSyntax(_))
        ));
    }

    #[test]
    fn classify() {
        let g = family();
        assert_eq!(
            classify_plan("<PATH> marry_to <SEP> father_of </PATH>", &g),
            PlanClass::Grounded(rp(&g, &["marry_to", "father_of"]))
        );
        assert_eq!(
            classify_plan("<PATH> marry_to <SEP> born_in </PATH>", &g),
            PlanClass::Ungrounded {
                labels: vec!["marry_to".into(), "born_in".into()],
                unknown: vec!["born_in".into()]
            }
        );
        assert!(matches!(classify_plan("", &g), PlanClass::Structural(_)));
    }

    #[test]
    fn label_roundtrip() {
        let g = family();
        let alice = g.entity_id("Alice").unwrap();
        let got = retrieve_reasoning_paths(&g, &[alice], &rp(&g, &["marry_to", "father_of"]), 100).unwrap();
        for p in &got.paths {
            assert_eq!(&ReasoningPath::from_labels(&g, &p.to_labels(&g)).unwrap(), p);
        }
        assert!(ReasoningPath::from_labels(&g, &["Alice".into(), "marry_to".into()]).is_err());
    }
}
