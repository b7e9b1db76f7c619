//! Turning retrieved reasoning paths into answers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::llm::{ChatModel, Message};
use crate::paths::ReasoningPath;

pub const ARROW: &str = " → ";

pub const REASONING_INSTRUCTION: &str = "Based on the reasoning paths, please answer the given question. \
Please keep the answer as simple as possible and return all the possible answers as a list.";

pub const EXPLANATION_INSTRUCTION: &str =
    "Based on the reasoning paths, please answer the given question and explain why.";

/// Default number of answers kept by majority voting.
pub const DEFAULT_TOP_N: usize = 5;

/// Log-score used by [`aggregate_scores`] for an answer a plan did not score.
pub const DEFAULT_FLOOR_LOGPROB: f64 = -13.815510557964274; // ln(1e-6)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerMode {
    Llm,
    Vote,
    Raw,
}

impl fmt::Display for AnswerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerMode::Llm => "llm",
            AnswerMode::Vote => "vote",
            AnswerMode::Raw => "raw",
        })
    }
}

impl std::str::FromStr for AnswerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm" => Ok(AnswerMode::Llm),
            "vote" => Ok(AnswerMode::Vote),
            "raw" | "raw-endpoints" => Ok(AnswerMode::Raw),
            other => Err(Error::domain(format!("unknown answer mode {other:?}"))),
        }
    }
}

/// Ranked answers for one question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<String>,
    /// Aligned with `answers`, non-increasing.
    pub scores: Option<Vec<f64>>,
    pub raw_text: Option<String>,
    pub mode: AnswerMode,
}

impl AnswerSet {
    pub fn empty(mode: AnswerMode) -> Self {
        AnswerSet {
            answers: Vec::new(),
            scores: None,
            raw_text: None,
            mode,
        }
    }
}

/// One line of the predictions JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: Vec<String>,
    #[serde(default)]
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl Prediction {
    pub fn from_answers(id: &str, set: &AnswerSet) -> Self {
        Prediction {
            id: id.to_owned(),
            prediction: set.answers.clone(),
            mode: set.mode.to_string(),
            raw_text: set.raw_text.clone(),
        }
    }
}

/// Trim, collapse internal whitespace, and optionally case-fold.
pub fn normalize_with(s: &str, case_fold: bool) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if case_fold {
        collapsed.to_lowercase()
    } else {
        collapsed
    }
}

pub fn normalize_answer(s: &str) -> String {
    normalize_with(s, true)
}

/// One `e0 → r1 → e1 → ...` line per path, sorted and unique.
pub fn format_reasoning_paths(paths: &[ReasoningPath], g: &KnowledgeGraph) -> String {
    let mut lines: Vec<String> = paths.iter().map(|p| p.to_labels(g).join(ARROW)).collect();
    lines.sort();
    lines.dedup();
    lines.join("\n")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PromptMode {
    Answer,
    /// Explanation prompt with a few-shot examples block.
    Explain {
        examples: String,
    },
}

/// Everything after the instruction paragraph: the paths block and the question.
pub fn reasoning_input(question: &str, paths_block: &str) -> String {
    format!("Reasoning Paths:\n{paths_block}\n\nQuestion:\n{question}")
}

pub fn build_reasoning_prompt(question: &str, paths_block: &str, mode: &PromptMode) -> String {
    match mode {
        PromptMode::Answer => format!("{REASONING_INSTRUCTION}\n\n{}", reasoning_input(question, paths_block)),
        PromptMode::Explain { examples } => format!(
            "{EXPLANATION_INSTRUCTION}\n\nHere are some examples:\n{examples}\n\n{}",
            reasoning_input(question, paths_block)
        ),
    }
}

/// Terminal entities ranked by how many paths end there (ties by label).
/// Labels that normalize equal are counted together under the smallest label.
pub fn vote_answers(paths: &[ReasoningPath], g: &KnowledgeGraph, top_n: usize) -> AnswerSet {
    let mut tally = count_terminals(paths, g);
    tally.truncate(top_n);
    AnswerSet {
        scores: Some(tally.iter().map(|(_, c)| *c as f64).collect()),
        answers: tally.into_iter().map(|(l, _)| l).collect(),
        raw_text: None,
        mode: AnswerMode::Vote,
    }
}

/// Every distinct terminal entity; the answer set of the no-reasoning ablation.
pub fn raw_endpoint_answers(paths: &[ReasoningPath], g: &KnowledgeGraph) -> AnswerSet {
    let tally = count_terminals(paths, g);
    AnswerSet {
        scores: Some(tally.iter().map(|(_, c)| *c as f64).collect()),
        answers: tally.into_iter().map(|(l, _)| l).collect(),
        raw_text: None,
        mode: AnswerMode::Raw,
    }
}

fn count_terminals(paths: &[ReasoningPath], g: &KnowledgeGraph) -> Vec<(String, usize)> {
    let unique: HashSet<&ReasoningPath> = paths.iter().collect();
    let mut groups: HashMap<String, (String, usize)> = HashMap::new();
    for p in unique {
        let label = g.entity_label(p.end());
        let entry = groups
            .entry(normalize_answer(label))
            .or_insert_with(|| (label.to_owned(), 0));
        if label < entry.0.as_str() {
            entry.0 = label.to_owned();
        }
        entry.1 += 1;
    }
    let mut tally: Vec<(String, usize)> = groups.into_values().collect();
    tally.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    tally
}

fn json_to_answer(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn find_json_array(text: &str) -> Option<Vec<String>> {
    for (idx, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            return Some(items.iter().filter_map(json_to_answer).collect());
        }
    }
    None
}

/// Text after an `answer:` / `answers:` marker (case-insensitive).
fn after_answer_marker(text: &str) -> Option<&str> {
    // ASCII folding keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    for (idx, _) in lower.match_indices("answer") {
        let mut rest = &lower[idx + "answer".len()..];
        rest = rest.strip_prefix('s').unwrap_or(rest);
        let trimmed = rest.trim_start_matches([' ', '\t']);
        if trimmed.starts_with(':') {
            let offset = lower.len() - trimmed.len() + 1;
            return Some(&text[offset..]);
        }
    }
    None
}

fn strip_bullet(item: &str) -> &str {
    let item = item.trim();
    if let Some(rest) = item.strip_prefix("- ").or_else(|| item.strip_prefix("* ")) {
        return rest.trim();
    }
    let digits = item.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &item[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    item
}

/// Reads an answer list out of free model text: a JSON array if one parses,
/// else the comma/newline separated items after an `answer:` marker, else the
/// whole reply as one answer. Items are deduplicated after normalization.
pub fn parse_answer_list(text: &str) -> Vec<String> {
    let items: Vec<String> = if let Some(arr) = find_json_array(text) {
        arr
    } else if let Some(rest) = after_answer_marker(text) {
        rest.split(['\n', ','])
            .map(strip_bullet)
            .map(|s| s.trim_end_matches('.').trim().to_owned())
            .collect()
    } else {
        vec![text.trim().to_owned()]
    };
    let mut seen = HashSet::new();
    items
        .into_iter()
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty() && seen.insert(normalize_answer(s)))
        .collect()
}

/// Prompts the model with the formatted paths and parses its reply.
pub fn llm_reason(client: &dyn ChatModel, question: &str, paths_block: &str, mode: &PromptMode) -> Result<AnswerSet> {
    let prompt = build_reasoning_prompt(question, paths_block, mode);
    let candidates = client.complete(&[Message::user(prompt)], 1)?;
    let text = candidates.into_iter().next().map(|c| c.text).unwrap_or_default();
    Ok(AnswerSet {
        answers: parse_answer_list(&text),
        scores: None,
        raw_text: Some(text),
        mode: AnswerMode::Llm,
    })
}

/// Product-of-experts over plans in log space: each answer's score is the sum
/// of its log-scores across plans, with `floor` standing in where a plan did
/// not score the answer.
pub fn aggregate_scores<'a, I>(per_plan: I, floor: f64) -> Result<BTreeMap<String, f64>>
where
    I: IntoIterator<Item = &'a BTreeMap<String, f64>>,
{
    let plans: Vec<&BTreeMap<String, f64>> = per_plan.into_iter().collect();
    for scores in &plans {
        if let Some((a, s)) = scores.iter().find(|(_, s)| !s.is_finite() || **s > 0.0) {
            return Err(Error::domain(format!(
                "log-score for {a:?} must be finite and <= 0, got {s}"
            )));
        }
    }
    let answers: std::collections::BTreeSet<&String> = plans.iter().flat_map(|m| m.keys()).collect();
    Ok(answers
        .into_iter()
        .map(|a| {
            let total = plans.iter().map(|m| m.get(a).copied().unwrap_or(floor)).sum();
            (a.clone(), total)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;
    use crate::paths::{retrieve_reasoning_paths, RelationPath};

    fn family() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.add("Alice", "marry_to", "Bob");
        b.add("Bob", "father_of", "Charlie");
        b.add("Bob", "father_of", "Dora");
        b.build()
    }

    fn family_paths(g: &KnowledgeGraph) -> Vec<ReasoningPath> {
        let plan = RelationPath(vec![
            g.relation_id("marry_to").unwrap(),
            g.relation_id("father_of").unwrap(),
        ]);
        retrieve_reasoning_paths(g, &[g.entity_id("Alice").unwrap()], &plan, 100)
            .unwrap()
            .paths
    }

    #[test]
    fn formats_paths() {
        let g = family();
        let paths = family_paths(&g);
        assert_eq!(
            format_reasoning_paths(&paths[..1], &g),
            "Alice → marry_to → Bob → father_of → Charlie"
        );
        assert_eq!(format_reasoning_paths(&[], &g), "");
    }

    #[test]
    fn formats_northern_district_path() {
        let mut b = GraphBuilder::new();
        b.add(
            "Northern District",
            "location.administrative_division.first_level_division_of",
            "Israel",
        );
        b.add(
            "Israel",
            "government.form_of_government.countries",
            "Parliamentary system",
        );
        let g = b.build();
        let plan = RelationPath(vec![
            g.relation_id("location.administrative_division.first_level_division_of")
                .unwrap(),
            g.relation_id("government.form_of_government.countries").unwrap(),
        ]);
        let paths = retrieve_reasoning_paths(&g, &[g.entity_id("Northern District").unwrap()], &plan, 10)
            .unwrap()
            .paths;
        assert_eq!(
            format_reasoning_paths(&paths, &g),
            "Northern District → location.administrative_division.first_level_division_of → Israel → \
             government.form_of_government.countries → Parliamentary system"
        );
    }

    #[test]
    fn prompts() {
        let p = build_reasoning_prompt("q?", "A → r → B", &PromptMode::Answer);
        assert!(p.contains("return all the possible answers as a list"));
        assert!(p.ends_with("Reasoning Paths:\nA → r → B\n\nQuestion:\nq?"));
        let empty = build_reasoning_prompt("q?", "", &PromptMode::Answer);
        assert!(empty.contains("Reasoning Paths:\n\n\nQuestion:\nq?"));
        let ex = build_reasoning_prompt(
            "q?",
            "",
            &PromptMode::Explain {
                examples: String::new(),
            },
        );
        assert!(ex.starts_with(EXPLANATION_INSTRUCTION));
        assert!(ex.contains("Here are some examples:\n\n\nReasoning Paths:"));
    }

    #[test]
    fn vote_and_raw_on_family() {
        let g = family();
        let paths = family_paths(&g);
        let raw = raw_endpoint_answers(&paths, &g);
        assert_eq!(raw.answers, vec!["Charlie", "Dora"]);
        assert_eq!(raw.mode, AnswerMode::Raw);
        let vote = vote_answers(&paths[..1], &g, 5);
        assert_eq!(vote.answers, vec!["Charlie"]);
        assert_eq!(vote.scores, Some(vec![1.0]));
        assert!(vote_answers(&[], &g, 5).answers.is_empty());
    }

    #[test]
    fn vote_counts() {
        let mut b = GraphBuilder::new();
        b.add("A", "r", "x");
        b.add("B", "r", "x");
        b.add("C", "r", "y");
        let g = b.build();
        let r = RelationPath(vec![g.relation_id("r").unwrap()]);
        let starts: Vec<_> = ["A", "B", "C"].iter().map(|l| g.entity_id(l).unwrap()).collect();
        let paths = retrieve_reasoning_paths(&g, &starts, &r, 100).unwrap().paths;
        let v = vote_answers(&paths, &g, 5);
        assert_eq!(v.answers, vec!["x", "y"]);
        assert_eq!(v.scores, Some(vec![2.0, 1.0]));
        assert_eq!(vote_answers(&paths, &g, 1).answers, vec!["x"]);
    }

    #[test]
    fn answer_list_parsing() {
        assert!(parse_answer_list("Answer: []").is_empty());
        assert_eq!(
            parse_answer_list(r#"Sure: ["Busch Stadium", "x"]"#),
            vec!["Busch Stadium", "x"]
        );
        assert_eq!(
            parse_answer_list("Answers:\n- Jamaican English\n- Jamaican Creole\n"),
            vec!["Jamaican English", "Jamaican Creole"]
        );
        assert_eq!(parse_answer_list("answer: a, b, A."), vec!["a", "b"]);
        assert_eq!(parse_answer_list("  Busch Stadium \n"), vec!["Busch Stadium"]);
        assert!(parse_answer_list("   ").is_empty());
        assert_eq!(parse_answer_list("[not json"), vec!["[not json"]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  Parliamentary   System "), "parliamentary system");
        assert_eq!(normalize_with(" A  b ", false), "A b");
    }

    #[test]
    fn aggregation() {
        let half = 0.5f64.ln();
        let p1: BTreeMap<String, f64> = [("a".to_owned(), half)].into_iter().collect();
        let p2 = p1.clone();
        let agg = aggregate_scores([&p1, &p2], DEFAULT_FLOOR_LOGPROB).unwrap();
        assert!((agg["a"] - 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(aggregate_scores([&p1], DEFAULT_FLOOR_LOGPROB).unwrap(), p1);
        assert!(aggregate_scores(std::iter::empty(), -1.0).unwrap().is_empty());
        let bad: BTreeMap<String, f64> = [("a".to_owned(), 0.1)].into_iter().collect();
        assert!(aggregate_scores([&bad], -1.0).is_err());

        let p3: BTreeMap<String, f64> = [("b".to_owned(), half)].into_iter().collect();
        let agg = aggregate_scores([&p1, &p3], -10.0).unwrap();
        assert!((agg["a"] - (half - 10.0)).abs() < 1e-12);
        assert!((agg["b"] - (half - 10.0)).abs() < 1e-12);
        assert!((DEFAULT_FLOOR_LOGPROB - 1e-6f64.ln()).abs() < 1e-12);
    }
}
