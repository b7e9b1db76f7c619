//! Instruction-tuning datasets for planning and retrieval-reasoning.
//!
//! Planning records pair a question with one serialized gold relation path;
//! reasoning records pair a question and its gold reasoning paths with the
//! gold answers. Gold relation paths are the shortest relation paths from the
//! question entities to the answers.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{resolve_known, EntityId, KnowledgeGraph};
use crate::paths::{ground_plan, retrieve_reasoning_paths, serialize_plan, ReasoningPath, DEFAULT_MAX_LEN};
use crate::planning::{gold_plans, QaInstance, PLANNING_TEMPLATE, QUESTION_SLOT};
use crate::reasoning::{format_reasoning_paths, reasoning_input, REASONING_INSTRUCTION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub max_len: usize,
    /// Gold plans kept per question, in oracle rank order.
    pub plan_cap: usize,
    /// Cap on relation sequences and on retrieved paths per plan.
    pub max_paths: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            max_len: DEFAULT_MAX_LEN,
            plan_cap: 10,
            max_paths: crate::paths::DEFAULT_MAX_PATHS,
        }
    }
}

/// Per-question bookkeeping used for statistics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub id: String,
    pub answers: usize,
    /// Declared hop count, or the gold path length when undeclared.
    pub hops: Option<usize>,
    pub plans: usize,
    pub retained: bool,
    pub truncated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetBuild {
    pub records: Vec<InstructionRecord>,
    pub questions: Vec<QuestionSummary>,
}

impl DatasetBuild {
    pub fn skipped(&self) -> usize {
        self.questions.iter().filter(|q| !q.retained).count()
    }
}

/// The instruction half of the planning prompt; `instruction + " " + question`
/// is the full prompt.
pub fn planning_instruction() -> &'static str {
    PLANNING_TEMPLATE
        .strip_suffix(QUESTION_SLOT)
        .unwrap_or(PLANNING_TEMPLATE)
        .trim_end()
}

struct QuestionGold {
    plans: Vec<Vec<String>>,
    paths: Vec<ReasoningPath>,
    summary: QuestionSummary,
}

fn extract(g: &KnowledgeGraph, qa: &QaInstance, cfg: &DatasetConfig) -> Result<QuestionGold> {
    let gold = gold_plans(g, qa, cfg.max_len, cfg.max_paths)?;
    let mut plans = gold.plans;
    plans.truncate(cfg.plan_cap);
    let mut truncated = gold.truncated;

    let starts = resolve_known(g, &qa.question_entities);
    let answers: HashSet<EntityId> = resolve_known(g, &qa.answer_entities).into_iter().collect();
    let mut paths = Vec::new();
    for plan in &plans {
        let rel = ground_plan(plan, g)?;
        let got = retrieve_reasoning_paths(g, &starts, &rel, cfg.max_paths)?;
        truncated |= got.truncated;
        paths.extend(got.paths.into_iter().filter(|p| answers.contains(&p.end())));
    }
    paths.sort_unstable();
    paths.dedup();

    if gold.unresolved {
        log::debug!("{}: question or answer entities not in graph, skipped", qa.id);
    } else if plans.is_empty() {
        log::debug!("{}: no answer within {} hops, skipped", qa.id, cfg.max_len);
    }
    Ok(QuestionGold {
        summary: QuestionSummary {
            id: qa.id.clone(),
            answers: qa.answer_entities.len(),
            hops: qa.hop_count.or(gold.distance),
            plans: plans.len(),
            retained: !plans.is_empty(),
            truncated,
        },
        plans,
        paths,
    })
}

fn planning_records(qa: &QaInstance, gold: &QuestionGold) -> Vec<InstructionRecord> {
    gold.plans
        .iter()
        .map(|plan| InstructionRecord {
            instruction: planning_instruction().to_owned(),
            input: qa.question.clone(),
            output: serialize_plan(plan),
        })
        .collect()
}

fn reasoning_record(g: &KnowledgeGraph, qa: &QaInstance, gold: &QuestionGold) -> Option<InstructionRecord> {
    if !gold.summary.retained {
        return None;
    }
    Some(InstructionRecord {
        instruction: REASONING_INSTRUCTION.to_owned(),
        input: reasoning_input(&qa.question, &format_reasoning_paths(&gold.paths, g)),
        output: qa.answer_entities.join("\n"),
    })
}

fn extract_all(qa_split: &[QaInstance], g: &KnowledgeGraph, cfg: &DatasetConfig) -> Result<Vec<QuestionGold>> {
    qa_split.par_iter().map(|qa| extract(g, qa, cfg)).collect()
}

/// One record per (question, gold plan). Unresolvable or unreachable
/// questions are skipped and counted.
pub fn build_planning_instances(
    qa_split: &[QaInstance],
    g: &KnowledgeGraph,
    cfg: &DatasetConfig,
) -> Result<DatasetBuild> {
    Ok(build_datasets(qa_split, g, cfg)?.0)
}

/// One record per retained question: gold reasoning paths in, gold answers out.
pub fn build_reasoning_instances(
    qa_split: &[QaInstance],
    g: &KnowledgeGraph,
    cfg: &DatasetConfig,
) -> Result<DatasetBuild> {
    Ok(build_datasets(qa_split, g, cfg)?.1)
}

/// Both datasets from a single extraction pass, as `(planning, reasoning)`.
pub fn build_datasets(
    qa_split: &[QaInstance],
    g: &KnowledgeGraph,
    cfg: &DatasetConfig,
) -> Result<(DatasetBuild, DatasetBuild)> {
    let golds = extract_all(qa_split, g, cfg)?;
    let mut planning = DatasetBuild::default();
    let mut reasoning = DatasetBuild::default();
    for (qa, gold) in qa_split.iter().zip(&golds) {
        planning.records.extend(planning_records(qa, gold));
        reasoning.records.extend(reasoning_record(g, qa, gold));
        planning.questions.push(gold.summary.clone());
        reasoning.questions.push(gold.summary.clone());
    }
    Ok((planning, reasoning))
}

pub fn answer_bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2..=4 => "2-4",
        5..=9 => "5-9",
        _ => ">=10",
    }
}

pub fn hop_bucket(hops: Option<usize>) -> &'static str {
    match hops {
        None => "unknown",
        Some(0 | 1) => "<=1",
        Some(2) => "2",
        Some(_) => ">=3",
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub questions: usize,
    pub retained_questions: usize,
    pub skipped_questions: usize,
    pub truncated_questions: usize,
    pub planning_records: usize,
    pub reasoning_records: usize,
    /// Retained questions by gold answer count.
    pub answer_histogram: BTreeMap<String, usize>,
    /// Retained questions by hop count.
    pub hop_histogram: BTreeMap<String, usize>,
}

pub fn dataset_stats(planning: &DatasetBuild, reasoning: &DatasetBuild) -> DatasetStats {
    let questions = &planning.questions;
    let mut stats = DatasetStats {
        questions: questions.len(),
        planning_records: planning.records.len(),
        reasoning_records: reasoning.records.len(),
        ..Default::default()
    };
    for q in questions {
        if q.truncated {
            stats.truncated_questions += 1;
        }
        if !q.retained {
            stats.skipped_questions += 1;
            continue;
        }
        stats.retained_questions += 1;
        *stats
            .answer_histogram
            .entry(answer_bucket(q.answers).to_owned())
            .or_default() += 1;
        *stats.hop_histogram.entry(hop_bucket(q.hops).to_owned()).or_default() += 1;
    }
    stats
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("questions", self.questions),
            ("retained", self.retained_questions),
            ("skipped", self.skipped_questions),
            ("truncated", self.truncated_questions),
            ("planning records", self.planning_records),
            ("reasoning records", self.reasoning_records),
        ];
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<20} {v:>10}");
        }
        let _ = writeln!(out, "\n{:<20} {:>10}", "#answers", "questions");
        for b in ["0", "1", "2-4", "5-9", ">=10"] {
            if let Some(v) = self.answer_histogram.get(b) {
                let _ = writeln!(out, "{b:<20} {v:>10}");
            }
        }
        let _ = writeln!(out, "\n{:<20} {:>10}", "#hops", "questions");
        for b in ["<=1", "2", ">=3", "unknown"] {
            if let Some(v) = self.hop_histogram.get(b) {
                let _ = writeln!(out, "{b:<20} {v:>10}");
            }
        }
        out
    }
}
