//! Progressive retrieval and reasoning over knowledge graphs.
//!
//! A question is split into key-entity chains of sub-questions. Each chain
//! grows partial reasoning paths one hop per sub-question: scored relation
//! retrieval, LLM relation pruning, scored triple retrieval with top-p
//! selection, then LLM triple pruning gated by evidential uncertainty.
//! Finally every prefix of every path is ranked against the question and the
//! LLM answers from that context.

pub mod config;
pub mod context;
pub mod decompose;
pub mod engine;
pub mod eval;
pub mod graph;
pub mod llm;
pub mod pipeline;
pub mod scoring;
pub mod uncertainty;
mod transport;

pub use config::{Config, EngineConfig, Placement};
pub use context::{FinalContext, Prefix};
pub use decompose::{DecompositionResult, Question, SubQuestionChain};
pub use engine::{Engine, PartialReasoningPath, PipelineError, Stage, StepOutcome, TraceRecord};
pub use eval::{ErrorClass, MetricsReport, Normalization, QuestionResult};
pub use graph::{Direction, Entity, KnowledgeGraph, Relation, RelationHierarchy, Triple};
pub use llm::{Gateway, Usage, UsageCounters};
pub use pipeline::{Pipeline, QuestionAnswer};
pub use scoring::{RelationCandidateSet, ScoredTriple, ScorerBackend, SelectionResult};
pub use uncertainty::{AuReport, GateDecision};
