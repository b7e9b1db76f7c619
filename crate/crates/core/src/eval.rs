//! Scoring, end-to-end pipeline runs, ablations and retrieval profiling.
//!
//! Metrics are macro-averaged: each question gets Hits@1, precision, recall
//! and F1 over normalized answer strings, and the report is the mean over
//! questions. Hits@1 only looks at the first predicted answer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{answer_bucket, hop_bucket};
use crate::error::{Error, Result};
use crate::kg::{resolve_known, EntityId, KnowledgeGraph};
use crate::llm::ChatModel;
use crate::paths::{ground_plan, retrieve_reasoning_paths, ReasoningPath};
use crate::planning::{PlanSet, Planner, QaInstance, RandomPlanner};
use crate::reasoning::{
    format_reasoning_paths, llm_reason, normalize_with, raw_endpoint_answers, vote_answers, AnswerMode, AnswerSet,
    Prediction, PromptMode, DEFAULT_TOP_N,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub hit: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-question metrics over normalized answer strings.
pub fn score_question(prediction: &[String], gold: &[String], case_fold: bool) -> QuestionScore {
    let gold: HashSet<String> = gold.iter().map(|a| normalize_with(a, case_fold)).collect();
    let pred: HashSet<String> = prediction.iter().map(|a| normalize_with(a, case_fold)).collect();
    let hit = prediction
        .first()
        .is_some_and(|top| gold.contains(&normalize_with(top, case_fold)));
    let overlap = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() {
        0.0
    } else {
        overlap / pred.len() as f64
    };
    let recall = if gold.is_empty() {
        0.0
    } else {
        overlap / gold.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    QuestionScore {
        hit: if hit { 1.0 } else { 0.0 },
        precision,
        recall,
        f1,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub n: usize,
    pub hits_at_1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    hit: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl Accumulator {
    fn add(&mut self, s: &QuestionScore) {
        self.n += 1;
        self.hit += s.hit;
        self.precision += s.precision;
        self.recall += s.recall;
        self.f1 += s.f1;
    }

    fn finish(&self) -> BucketReport {
        let d = if self.n == 0 { 1.0 } else { self.n as f64 };
        BucketReport {
            n: self.n,
            hits_at_1: self.hit / d,
            precision: self.precision / d,
            recall: self.recall / d,
            f1: self.f1 / d,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub averaging: String,
    pub case_fold: bool,
    pub n_questions: usize,
    pub hits_at_1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Questions whose prediction failed (scored as empty).
    pub failures: usize,
    pub by_hops: BTreeMap<String, BucketReport>,
    pub by_answers: BTreeMap<String, BucketReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_profile: Option<RetrievalProfile>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreOptions {
    pub case_fold: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { case_fold: true }
    }
}

/// Scores predictions against gold answers. Gold questions without a
/// prediction count as empty predictions.
pub fn score(predictions: &[Prediction], gold: &[QaInstance]) -> Result<MetricReport> {
    score_with(predictions, gold, ScoreOptions::default())
}

pub fn score_with(predictions: &[Prediction], gold: &[QaInstance], opts: ScoreOptions) -> Result<MetricReport> {
    let mut gold_ids = HashSet::new();
    for qa in gold {
        if !gold_ids.insert(qa.id.as_str()) {
            return Err(Error::domain(format!("duplicate gold id {:?}", qa.id)));
        }
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if !gold_ids.contains(p.id.as_str()) {
            return Err(Error::domain(format!("prediction id {:?} not in gold set", p.id)));
        }
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::domain(format!("duplicate prediction id {:?}", p.id)));
        }
    }

    let mut total = Accumulator::default();
    let mut hops: BTreeMap<String, Accumulator> = BTreeMap::new();
    let mut answers: BTreeMap<String, Accumulator> = BTreeMap::new();
    for qa in gold {
        let pred = by_id.get(qa.id.as_str()).map_or(&[][..], |p| p.prediction.as_slice());
        let s = score_question(pred, &qa.answer_entities, opts.case_fold);
        total.add(&s);
        hops.entry(hop_bucket(qa.hop_count).to_owned()).or_default().add(&s);
        answers
            .entry(answer_bucket(qa.answer_entities.len()).to_owned())
            .or_default()
            .add(&s);
    }
    let overall = total.finish();
    Ok(MetricReport {
        averaging: "macro".into(),
        case_fold: opts.case_fold,
        n_questions: overall.n,
        hits_at_1: overall.hits_at_1,
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        failures: 0,
        by_hops: hops.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        by_answers: answers.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        retrieval_profile: None,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Table with one row per method: Hits@1, precision, recall, F1 in percent.
pub fn render_table(rows: &[(&str, &MetricReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    if let Some((_, first)) = rows.first() {
        let _ = writeln!(
            out,
            "# averaging: {} over questions; answers matched after whitespace normalization{}",
            first.averaging,
            if first.case_fold { " and case folding" } else { "" }
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}  {:>6}  {:>8}",
        "Method", "Hits@1", "Precision", "Recall", "F1", "n", "failures"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}  {:>6}  {:>8}",
            name,
            pct(r.hits_at_1),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            r.n_questions,
            r.failures
        );
    }
    out
}

impl MetricReport {
    pub fn to_text(&self, name: &str) -> String {
        let mut out = render_table(&[(name, self)]);
        let sections: [(&str, &BTreeMap<String, BucketReport>, &[&str]); 2] = [
            ("#hops", &self.by_hops, &["<=1", "2", ">=3", "unknown"]),
            ("#answers", &self.by_answers, &["0", "1", "2-4", "5-9", ">=10"]),
        ];
        for (title, buckets, order) in sections {
            let _ = writeln!(out, "\n{:<10}  {:>6}  {:>8}  {:>8}", title, "n", "Hits@1", "F1");
            for (bucket, b) in order.iter().filter_map(|k| buckets.get_key_value(*k)) {
                let _ = writeln!(
                    out,
                    "{:<10}  {:>6}  {:>8}  {:>8}",
                    bucket,
                    b.n,
                    pct(b.hits_at_1),
                    pct(b.f1)
                );
            }
        }
        if let Some(profile) = &self.retrieval_profile {
            out.push('\n');
            out.push_str(&profile.to_text());
        }
        out
    }
}

/// Reasoning paths retrieved for one question's plans.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlanRetrieval {
    pub paths: Vec<ReasoningPath>,
    pub ungrounded: usize,
    pub truncated: bool,
}

/// Grounds each plan, retrieves from the question entities and unions the
/// results. Ungrounded plans are counted and skipped.
pub fn retrieve_for_plans(
    g: &KnowledgeGraph,
    qa: &QaInstance,
    plans: &PlanSet,
    max_paths: usize,
) -> Result<PlanRetrieval> {
    let starts = resolve_known(g, &qa.question_entities);
    let mut out = PlanRetrieval::default();
    if starts.is_empty() {
        return Ok(out);
    }
    for labels in &plans.plans {
        match ground_plan(labels, g) {
            Ok(plan) => {
                let got = retrieve_reasoning_paths(g, &starts, &plan, max_paths)?;
                out.truncated |= got.truncated;
                out.paths.extend(got.paths);
            }
            Err(Error::UngroundedPlan(_)) => out.ungrounded += 1,
            Err(e) => return Err(e),
        }
    }
    out.paths.sort_unstable();
    out.paths.dedup();
    Ok(out)
}

#[derive(Clone)]
pub struct PipelineOptions<'c> {
    pub mode: AnswerMode,
    pub k: usize,
    pub top_n: usize,
    pub max_paths: usize,
    pub client: Option<&'c dyn ChatModel>,
    pub prompt_mode: PromptMode,
    /// Skip planning and retrieval; the reasoner sees an empty paths block.
    pub without_planning: bool,
}

impl Default for PipelineOptions<'_> {
    fn default() -> Self {
        PipelineOptions {
            mode: AnswerMode::Vote,
            k: 3,
            top_n: DEFAULT_TOP_N,
            max_paths: crate::paths::DEFAULT_MAX_PATHS,
            client: None,
            prompt_mode: PromptMode::Answer,
            without_planning: false,
        }
    }
}

/// Answers one question from already retrieved paths.
pub fn answer_from_paths(
    g: &KnowledgeGraph,
    qa: &QaInstance,
    paths: &[ReasoningPath],
    opts: &PipelineOptions<'_>,
) -> Result<AnswerSet> {
    match opts.mode {
        AnswerMode::Vote => Ok(vote_answers(paths, g, opts.top_n)),
        AnswerMode::Raw => Ok(raw_endpoint_answers(paths, g)),
        AnswerMode::Llm => {
            let client = opts
                .client
                .ok_or_else(|| Error::domain("llm answer mode needs a chat client"))?;
            llm_reason(
                client,
                &qa.question,
                &format_reasoning_paths(paths, g),
                &opts.prompt_mode,
            )
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub failures: usize,
    pub plans: usize,
    pub ungrounded_plans: usize,
    pub truncated_retrievals: usize,
    pub retrieved_paths: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub predictions: Vec<Prediction>,
    pub report: MetricReport,
    pub stats: PipelineStats,
}

struct Outcome {
    prediction: Prediction,
    failed: bool,
    plans: usize,
    ungrounded: usize,
    truncated: bool,
    paths: usize,
}

fn run_question(
    g: &KnowledgeGraph,
    qa: &QaInstance,
    planner: &dyn Planner,
    opts: &PipelineOptions<'_>,
) -> Result<Outcome> {
    let failed = |e: Error| -> Result<Outcome> {
        if e.is_transport() {
            log::warn!("{}: {e}", qa.id);
            Ok(Outcome {
                prediction: Prediction::from_answers(&qa.id, &AnswerSet::empty(opts.mode)),
                failed: true,
                plans: 0,
                ungrounded: 0,
                truncated: false,
                paths: 0,
            })
        } else {
            Err(e)
        }
    };
    let (retrieval, plans) = if opts.without_planning {
        (PlanRetrieval::default(), 0)
    } else {
        let plans = match planner.plan(qa, opts.k) {
            Ok(p) => p,
            Err(e) => return failed(e),
        };
        (retrieve_for_plans(g, qa, &plans, opts.max_paths)?, plans.len())
    };
    let answers = match answer_from_paths(g, qa, &retrieval.paths, opts) {
        Ok(a) => a,
        Err(e) => return failed(e),
    };
    Ok(Outcome {
        prediction: Prediction::from_answers(&qa.id, &answers),
        failed: false,
        plans,
        ungrounded: retrieval.ungrounded,
        truncated: retrieval.truncated,
        paths: retrieval.paths.len(),
    })
}

/// Plan, retrieve and answer every question, then score. Transport failures
/// are scored as empty predictions and counted; other errors abort.
pub fn run_pipeline(
    g: &KnowledgeGraph,
    qa_split: &[QaInstance],
    planner: &dyn Planner,
    opts: &PipelineOptions<'_>,
) -> Result<PipelineOutput> {
    if opts.mode == AnswerMode::Llm && opts.client.is_none() {
        return Err(Error::domain("llm answer mode needs a chat client"));
    }
    let outcomes: Vec<Outcome> = qa_split
        .par_iter()
        .map(|qa| run_question(g, qa, planner, opts))
        .collect::<Result<_>>()?;
    let mut stats = PipelineStats::default();
    let mut predictions = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        stats.failures += usize::from(o.failed);
        stats.plans += o.plans;
        stats.ungrounded_plans += o.ungrounded;
        stats.truncated_retrievals += usize::from(o.truncated);
        stats.retrieved_paths += o.paths;
        predictions.push(o.prediction);
    }
    let mut report = score(&predictions, qa_split)?;
    report.failures = stats.failures;
    Ok(PipelineOutput {
        predictions,
        report,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub output: PipelineOutput,
}

/// Options for each ablation row, derived from the base options.
///
/// Rows: the full pipeline (LLM reasoning when a client is present, voting
/// otherwise), then without planning (LLM only, skipped without a client),
/// without reasoning (raw endpoints), with random plans, and with voting.
pub fn ablation_modes<'c>(base: &PipelineOptions<'c>) -> Vec<(&'static str, PipelineOptions<'c>, bool)> {
    let reasoner = if base.client.is_some() {
        AnswerMode::Llm
    } else {
        AnswerMode::Vote
    };
    let with = |mode: AnswerMode, without_planning: bool| PipelineOptions {
        mode,
        without_planning,
        ..base.clone()
    };
    let mut rows = vec![("full", with(reasoner, false), false)];
    if base.client.is_some() {
        rows.push(("w/o planning", with(AnswerMode::Llm, true), false));
    }
    rows.push(("w/o reasoning", with(AnswerMode::Raw, false), false));
    rows.push(("w/ random plans", with(reasoner, false), true));
    rows.push(("w/ vote reasoning", with(AnswerMode::Vote, false), false));
    rows
}

pub fn ablate(
    g: &KnowledgeGraph,
    qa_split: &[QaInstance],
    planner: &dyn Planner,
    random_planner: &RandomPlanner<'_>,
    base: &PipelineOptions<'_>,
) -> Result<Vec<AblationRow>> {
    ablation_modes(base)
        .into_iter()
        .map(|(name, opts, random)| {
            let p: &dyn Planner = if random { random_planner } else { planner };
            Ok(AblationRow {
                name: name.to_owned(),
                output: run_pipeline(g, qa_split, p, &opts)?,
            })
        })
        .collect()
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let table: Vec<(&str, &MetricReport)> = rows.iter().map(|r| (r.name.as_str(), &r.output.report)).collect();
    render_table(&table)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub k: usize,
    pub mean_paths: f64,
    pub mean_time_ms: f64,
    /// Fraction of questions with at least one retrieved path ending in a gold answer.
    pub coverage: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalProfile {
    pub questions: usize,
    pub rows: Vec<ProfileRow>,
}

impl RetrievalProfile {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>4}  {:>12}  {:>12}  {:>9}\n",
            "K", "mean paths", "mean ms", "coverage"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>4}  {:>12.3}  {:>12.4}  {:>9}",
                r.k,
                r.mean_paths,
                r.mean_time_ms,
                pct(r.coverage)
            );
        }
        out
    }
}

/// Retrieval cost and answer coverage as a function of the number of plans.
/// Plans are requested once at the largest K and prefixes are timed
/// question by question on the calling thread.
pub fn profile_retrieval(
    g: &KnowledgeGraph,
    qa_split: &[QaInstance],
    planner: &dyn Planner,
    k_values: &[usize],
    max_paths: usize,
) -> Result<RetrievalProfile> {
    if k_values.is_empty() {
        return Err(Error::domain("profile needs at least one K"));
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("K values must be strictly ascending"));
    }
    let max_k = *k_values.last().unwrap();
    let mut paths = vec![0usize; k_values.len()];
    let mut nanos = vec![0u128; k_values.len()];
    let mut covered = vec![0usize; k_values.len()];
    for qa in qa_split {
        let plans = planner.plan(qa, max_k)?;
        let gold: HashSet<EntityId> = resolve_known(g, &qa.answer_entities).into_iter().collect();
        for (i, &k) in k_values.iter().enumerate() {
            let prefix = plans.top(k);
            let started = Instant::now();
            let got = retrieve_for_plans(g, qa, &prefix, max_paths)?;
            nanos[i] += started.elapsed().as_nanos();
            paths[i] += got.paths.len();
            if got.paths.iter().any(|p| gold.contains(&p.end())) {
                covered[i] += 1;
            }
        }
    }
    let n = qa_split.len().max(1) as f64;
    Ok(RetrievalProfile {
        questions: qa_split.len(),
        rows: k_values
            .iter()
            .enumerate()
            .map(|(i, &k)| ProfileRow {
                k,
                mean_paths: paths[i] as f64 / n,
                mean_time_ms: nanos[i] as f64 / 1e6 / n,
                coverage: covered[i] as f64 / n,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn gold(id: &str, answers: &[&str]) -> QaInstance {
        QaInstance {
            id: id.into(),
            question: "q".into(),
            question_entities: vec![],
            answer_entities: s(answers),
            hop_count: Some(1),
        }
    }

    fn pred(id: &str, answers: &[&str]) -> Prediction {
        Prediction {
            id: id.into(),
            prediction: s(answers),
            mode: "vote".into(),
            raw_text: None,
        }
    }

    #[test]
    fn hand_cases() {
        let q = score_question(&s(&["Parliamentary system"]), &s(&["Parliamentary system"]), true);
        assert_eq!(
            q,
            QuestionScore {
                hit: 1.0,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        let q = score_question(&s(&["a", "b"]), &s(&["a", "c"]), true);
        assert_eq!((q.hit, q.precision, q.recall, q.f1), (1.0, 0.5, 0.5, 0.5));
        let q = score_question(&[], &s(&["a"]), true);
        assert_eq!(q, QuestionScore::default());
    }

    #[test]
    fn normalization_applies() {
        let q = score_question(&s(&[" parliamentary  SYSTEM"]), &s(&["Parliamentary system"]), true);
        assert_eq!(q.f1, 1.0);
        let q = score_question(&s(&["parliamentary system"]), &s(&["Parliamentary system"]), false);
        assert_eq!(q.f1, 0.0);
    }

    #[test]
    fn missing_predictions_are_empty() {
        let g = vec![gold("1", &["a"]), gold("2", &["b"])];
        let r = score(&[pred("1", &["a"])], &g).unwrap();
        assert_eq!(r.n_questions, 2);
        assert_eq!(r.hits_at_1, 0.5);
        assert_eq!(r.by_hops["<=1"].n, 2);
    }

    #[test]
    fn id_errors() {
        let g = vec![gold("1", &["a"])];
        assert!(score(&[pred("1", &["a"]), pred("1", &["a"])], &g).is_err());
        assert!(score(&[pred("9", &["a"])], &g).is_err());
        assert!(score(&[], &[gold("1", &["a"]), gold("1", &["b"])]).is_err());
    }

    #[test]
    fn text_report_layout() {
        let g = vec![gold("1", &["a"])];
        let r = score(&[pred("1", &["a"])], &g).unwrap();
        let text = r.to_text("oracle+vote");
        assert!(text.contains("Precision"));
        assert!(text.contains("100.00"));
        assert!(text.starts_with("# averaging: macro"));
    }

    #[test]
    fn profile_rejects_bad_k() {
        let g = KnowledgeGraph::empty();
        let p = crate::planning::FilePlanner::default();
        assert!(profile_retrieval(&g, &[], &p, &[], 10).is_err());
        assert!(profile_retrieval(&g, &[], &p, &[2, 1], 10).is_err());
    }
}
