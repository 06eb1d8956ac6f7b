//! End-to-end wiring: configuration to answers and evaluation results.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{Config, EngineConfig, LlmConfig, ScorerConfig};
use crate::context::{self, FinalContext};
use crate::decompose::Question;
use crate::engine::{Engine, PartialReasoningPath, PipelineError, RunOutput, Stage, Trace, TraceRecord};
use crate::eval::{MetricsReport, Normalization, Observation, QuestionResult};
use crate::graph::{self, GraphError, KnowledgeGraph};
use crate::llm::{Gateway, HttpBackend, LlmBackend, RenderError, ScriptError, ScriptedBackend, TemplateSet, Usage, UsageCounters};
use crate::scoring::{HttpScorer, LexicalScorer, ScorerBackend, ScoringError};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("llm: {0}")]
    Script(#[from] ScriptError),
    #[error("prompts: {0}")]
    Prompt(#[from] RenderError),
    #[error("{0}")]
    Scorer(#[from] ScoringError),
}

pub struct Pipeline {
    pub engine: Engine,
    /// Present when the LLM backend is scripted, for call accounting.
    pub scripted: Option<Arc<ScriptedBackend>>,
}

/// Result of answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAnswer {
    pub question_id: String,
    pub answers: Vec<String>,
    pub unanswerable: bool,
    pub run: RunOutput,
    pub context: FinalContext,
    pub raw_answer: String,
    pub usage: Usage,
    pub trace: Vec<TraceRecord>,
}

impl QuestionAnswer {
    pub fn paths(&self) -> Vec<PartialReasoningPath> {
        self.run.paths()
    }
}

impl Pipeline {
    pub fn new(engine: Engine) -> Self {
        Self { engine, scripted: None }
    }

    pub fn from_config(config: &Config) -> Result<Self, BuildError> {
        let mut graph = graph::load_graph(&config.graph.triples)?;
        if let Some(labels) = &config.graph.labels {
            graph.apply_labels(&graph::load_labels(labels)?);
        }
        let graph = Arc::new(graph);
        let mut scripted = None;
        let backend: Arc<dyn LlmBackend> = match &config.llm {
            LlmConfig::Scripted { scripts } => {
                let b = Arc::new(ScriptedBackend::load_layered(scripts)?);
                scripted = Some(b.clone());
                b
            }
            LlmConfig::Http(h) => Arc::new(HttpBackend::new(h.clone())),
        };
        let mut templates = TemplateSet::default();
        for (id, path) in &config.prompts {
            templates.load_override(*id, path)?;
        }
        let gateway = Gateway::new(backend)
            .with_templates(templates)
            .with_retry(config.retry)
            .with_decoding(config.decoding);
        let scorer: Arc<dyn ScorerBackend> = match &config.scorer {
            ScorerConfig::Lexical => Arc::new(LexicalScorer::from_graph(&graph)),
            ScorerConfig::Http(h) => Arc::new(HttpScorer::connect(h)?),
        };
        Ok(Self {
            engine: Engine::new(graph, gateway, scorer, config.engine.clone()),
            scripted,
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.engine.graph
    }

    pub fn config(&self) -> &EngineConfig {
        &self.engine.config
    }

    /// Runs every stage for one question with its own usage counters.
    pub fn answer(&self, question: &Question) -> Result<QuestionAnswer, PipelineError> {
        let counters = UsageCounters::new();
        let mut trace = Trace::new();
        let run = self.engine.run_question(question, &counters, &mut trace)?;
        let started = Instant::now();
        let paths = run.paths();
        let e = &self.engine;
        let ctx = context::build_context(
            &e.graph,
            &e.gateway,
            &question.text,
            &paths,
            e.scorer.as_ref(),
            e.config.dedup_prefixes,
            e.config.placement,
        )?;
        let fin = context::answer(&e.gateway, &ctx, &counters, e.config.parse_retries)?;
        trace.push(
            Stage::Final,
            None,
            started,
            json!({
                "paths": paths.len(),
                "prefixes_enumerated": ctx.enumerated,
                "context_paths": ctx.ordered_prefixes.len(),
                "answers": fin.answers,
                "unanswerable": fin.unanswerable,
            }),
        );
        Ok(QuestionAnswer {
            question_id: question.id.clone(),
            answers: fin.answers,
            unanswerable: fin.unanswerable,
            run,
            context: ctx,
            raw_answer: fin.raw,
            usage: counters.snapshot(),
            trace: trace.into_records(),
        })
    }

    fn observe(&self, question: &Question) -> Observation {
        match self.answer(question) {
            Ok(a) => {
                let paths = a.paths();
                let g = self.graph();
                let mut path_entities = Vec::new();
                let mut path_relations = Vec::new();
                for p in &paths {
                    path_entities.extend(p.entities().map(|id| g.label(id).to_string()));
                    path_relations.extend(p.triples.iter().map(|t| t.relation.clone()));
                }
                Observation {
                    predicted: a.answers,
                    unanswerable: a.unanswerable,
                    path_entities,
                    path_relations,
                    calls: a.usage.llm_calls,
                    tokens: a.usage.total_tokens(),
                    paths: paths.len(),
                    context_paths: a.context.ordered_prefixes.len(),
                    fallback_rounds: a.run.chains.iter().map(|c| c.fallback_rounds).sum(),
                    refinements: a.run.chains.iter().map(|c| c.refinements).sum(),
                    time: a.usage.wall_time,
                    failure: None,
                }
            }
            Err(err) => {
                tracing::warn!(question = %question.id, stage = %err.stage(), error = %err, "question failed");
                Observation {
                    unanswerable: true,
                    failure: Some(err.to_string()),
                    ..Observation::default()
                }
            }
        }
    }

    /// Evaluates all questions on up to `parallel` worker threads. Results
    /// come back in dataset order, so the report does not depend on it.
    pub fn evaluate(
        &self,
        questions: &[Question],
        parallel: usize,
        norm: Normalization,
    ) -> (Vec<QuestionResult>, MetricsReport) {
        let work = || -> Vec<QuestionResult> {
            questions
                .par_iter()
                .map(|q| QuestionResult::compute(q, self.observe(q), norm))
                .collect()
        };
        let results = match rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build() {
            Ok(pool) => pool.install(work),
            Err(e) => {
                tracing::warn!(error = %e, "thread pool unavailable; evaluating on the global pool");
                work()
            }
        };
        let report = MetricsReport::aggregate(&results, norm);
        (results, report)
    }
}
