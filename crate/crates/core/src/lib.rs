//! Knowledge-graph question answering by planning relation paths, grounding
//! them in a triple store, and reasoning over the retrieved paths.
//!
//! The crate is organised around the pipeline stages:
//!
//! - [`kg`]: interned triple store with forward/reverse adjacency indexes.
//! - [`paths`]: relation paths, reasoning paths, constrained BFS retrieval and
//!   shortest relation-path extraction.
//! - [`planning`]: planner backends (oracle, file, LLM, random) and the planning
//!   loss diagnostic.
//! - [`reasoning`]: answer aggregation (LLM, majority vote, raw endpoints,
//!   score products) and prompt construction.
//! - [`dataset`]: instruction-tuning dataset builders.
//! - [`eval`]: scoring, end-to-end pipeline runs, ablations and retrieval
//!   profiling.
//! - [`llm`]: blocking chat-completions client.
//! - [`synth`]: seeded synthetic graphs and question sets.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod kg;
pub mod llm;
pub mod paths;
pub mod planning;
pub mod reasoning;
pub mod synth;

pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use paths::{ReasoningPath, RelationPath};
pub use planning::{PlanSet, QaInstance};
pub use reasoning::AnswerSet;
