//! Sub-question answering loop.
//!
//! Each chain starts from its key entity. At every depth and for every
//! frontier path: retrieve and rank relations, let the LLM prune them, score
//! and top-p select the triples behind the kept relations, then let the LLM
//! pick answer entities among those triples. An uncertain pick is refined
//! against the strongest triples; a `None` pick retries relation pruning with
//! the relations not yet tried. Every accepted answer extends its path.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bindings;
use crate::config::EngineConfig;
use crate::decompose::{self, DecomposeError, DecompositionResult, Question, SubQuestionChain};
use crate::graph::{GraphError, KnowledgeGraph, Triple};
use crate::llm::{ChatResponse, Gateway, LlmError, TemplateId, UsageCounters};
use crate::scoring::{self, ScorerBackend, ScoringError, SelectionResult};
use crate::uncertainty::{self, AuReport, GateDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decompose,
    RelRetrieve,
    RelPrune,
    TriRetrieve,
    TriPrune,
    AuGate,
    Fallback,
    Final,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Decompose => "decompose",
            Self::RelRetrieve => "rel_retrieve",
            Self::RelPrune => "rel_prune",
            Self::TriRetrieve => "tri_retrieve",
            Self::TriPrune => "tri_prune",
            Self::AuGate => "au_gate",
            Self::Fallback => "fallback",
            Self::Final => "final",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("decompose: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("{stage}: {source}")]
    Llm {
        stage: Stage,
        #[source]
        source: LlmError,
    },
    #[error("{stage}: {source}")]
    Scoring {
        stage: Stage,
        #[source]
        source: ScoringError,
    },
    #[error("{stage}: {source}")]
    Graph {
        stage: Stage,
        #[source]
        source: GraphError,
    },
    #[error("final: answer unparseable after {attempts} attempts: {raw:?}")]
    FinalUnparseable { attempts: usize, raw: String },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            Self::Decompose(_) => Stage::Decompose,
            Self::Llm { stage, .. } | Self::Scoring { stage, .. } | Self::Graph { stage, .. } => *stage,
            Self::FinalUnparseable { .. } => Stage::Final,
        }
    }

    pub(crate) fn llm(stage: Stage) -> impl FnOnce(LlmError) -> Self {
        move |source| Self::Llm { stage, source }
    }

    fn scoring(stage: Stage) -> impl FnOnce(ScoringError) -> Self {
        move |source| Self::Scoring { stage, source }
    }

    fn graph(stage: Stage) -> impl FnOnce(GraphError) -> Self {
        move |source| Self::Graph { stage, source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: Stage,
    pub chain: Option<usize>,
    pub depth: Option<usize>,
    pub payload: Value,
    /// Seconds spent in this stage.
    pub duration: f64,
    /// Seconds since the run started, taken when the stage finished.
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    start: Instant,
    records: Vec<TraceRecord>,
}

impl Default for Trace {
    fn default() -> Self {
        Self {
            start: Instant::now(),
            records: Vec::new(),
        }
    }
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, stage: Stage, at: Option<Cursor>, started: Instant, payload: Value) {
        let now = Instant::now();
        self.records.push(TraceRecord {
            stage,
            chain: at.map(|c| c.chain),
            depth: at.map(|c| c.depth),
            payload,
            duration: now.duration_since(started).as_secs_f64(),
            elapsed: now.duration_since(self.start).as_secs_f64(),
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Position of a step: chain index and depth within the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cursor {
    pub chain: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialReasoningPath {
    pub source: String,
    pub triples: Vec<Triple>,
    pub frontier: String,
    /// Combined score `u` of each triple when it was selected.
    pub scores: Vec<f64>,
}

impl PartialReasoningPath {
    pub fn new(source: impl Into<String>) -> Self {
        let source = source.into();
        Self {
            frontier: source.clone(),
            source,
            triples: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn extended(&self, triple: Triple, u: f64) -> Self {
        let mut next = self.clone();
        next.frontier = triple.target().to_string();
        next.triples.push(triple);
        next.scores.push(u);
        next
    }

    /// Score of the newest hop, used to rank branches.
    pub fn last_score(&self) -> f64 {
        self.scores.last().copied().unwrap_or(1.0)
    }

    /// Whether every triple starts where the previous one ended.
    pub fn is_chained(&self) -> bool {
        let mut at = self.source.as_str();
        for t in &self.triples {
            if t.origin() != at {
                return false;
            }
            at = t.target();
        }
        at == self.frontier
    }

    /// Source followed by every reached entity.
    pub fn entities(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.source.as_str()).chain(self.triples.iter().map(|t| t.target()))
    }
}

/// An answer entity with the selected triple that reaches it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub entity: String,
    pub triple: Triple,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriplePruneOutcome {
    pub answers: Vec<Answer>,
    /// Answer strings from the LLM that matched no selected triple.
    pub dropped: Vec<String>,
    pub au: Option<AuReport>,
    pub refined: bool,
    /// Number of evidence triples in the refinement prompt.
    pub refine_evidence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub answers: Vec<Answer>,
    pub au_report: Option<AuReport>,
    pub refined: bool,
    pub fallback_rounds_used: usize,
    /// Relations kept by pruning, across all rounds.
    pub pruned_relations: Vec<String>,
    /// Retrieved relations never kept.
    pub unused_relations: Vec<String>,
}

impl StepOutcome {
    pub fn dead_end(&self) -> bool {
        self.answers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub chain: SubQuestionChain,
    /// Paths that reached the chain's full depth.
    pub paths: Vec<PartialReasoningPath>,
    /// Depth at which every path died, if any.
    pub dead_at: Option<usize>,
    pub fallback_rounds: usize,
    pub refinements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub decomposition: DecompositionResult,
    pub chains: Vec<ChainRun>,
}

impl RunOutput {
    /// Complete paths of every chain, in chain order.
    pub fn paths(&self) -> Vec<PartialReasoningPath> {
        self.chains.iter().flat_map(|c| c.paths.iter().cloned()).collect()
    }
}

/// Comma- or semicolon-separated names after the last `Return:` line, kept
/// only if offered, deduplicated and capped at `n`. `None` when the reply has
/// no `Return:` line.
pub fn parse_relation_list(text: &str, offered: &[String], n: usize) -> Option<Vec<String>> {
    let body = last_tagged_line(text, "return:")?;
    let mut out: Vec<String> = Vec::new();
    for item in body.split([',', ';']) {
        let name = item.trim().trim_matches(|c: char| "[]\"'`.".contains(c)).trim();
        if name.eq_ignore_ascii_case("none") || name.is_empty() {
            continue;
        }
        if offered.iter().any(|o| o == name) && !out.iter().any(|o| o == name) {
            out.push(name.to_string());
        }
    }
    out.truncate(n);
    Some(out)
}

/// Semicolon-separated entities after the last `Answer:` line; `None` when
/// the reply has no such line. An answer of `None` gives an empty list.
pub fn parse_answer_line(text: &str) -> Option<Vec<String>> {
    let body = last_tagged_line(text, "answer:")?;
    let mut out: Vec<String> = Vec::new();
    for item in body.split(';') {
        let item = item.trim().trim_matches(|c: char| "[]\"'`".contains(c)).trim();
        let item = item.strip_suffix('.').unwrap_or(item).trim();
        if item.is_empty() || item.eq_ignore_ascii_case("none") {
            continue;
        }
        if !out.iter().any(|o| o == item) {
            out.push(item.to_string());
        }
    }
    Some(out)
}

fn last_tagged_line<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    text.lines().rev().find_map(|line| {
        let line = line.trim().trim_start_matches(['-', '*']).trim_start();
        let head = line.get(..tag.len())?;
        head.eq_ignore_ascii_case(tag).then(|| line[tag.len()..].trim())
    })
}

pub struct Engine {
    pub graph: Arc<KnowledgeGraph>,
    pub gateway: Gateway,
    pub scorer: Arc<dyn ScorerBackend>,
    pub config: EngineConfig,
}

impl Engine {
    pub fn new(
        graph: Arc<KnowledgeGraph>,
        gateway: Gateway,
        scorer: Arc<dyn ScorerBackend>,
        config: EngineConfig,
    ) -> Self {
        Self {
            graph,
            gateway,
            scorer,
            config,
        }
    }

    /// Asks once, then resends while `parse` finds nothing, up to the parse
    /// retry budget. Returns the last reply and its parse.
    fn ask_parsed<T>(
        &self,
        stage: Stage,
        template: TemplateId,
        bindings: crate::llm::Bindings,
        top_k: Option<usize>,
        counters: &UsageCounters,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(ChatResponse, Option<T>), PipelineError> {
        let request = self
            .gateway
            .request(template, bindings, top_k)
            .map_err(PipelineError::llm(stage))?;
        let mut attempt = 0;
        loop {
            let reply = self
                .gateway
                .complete(&request, counters)
                .map_err(PipelineError::llm(stage))?;
            let parsed = parse(&reply.text);
            if parsed.is_some() || attempt >= self.config.parse_retries {
                return Ok((reply, parsed));
            }
            attempt += 1;
            tracing::warn!(%stage, attempt, "unparseable reply; asking again");
        }
    }

    /// LLM relation pruning over `offered` (already in ranked order).
    /// Returns the kept relations and the offered ones left unused.
    pub fn prune_relations(
        &self,
        sub_question: &str,
        source: &str,
        offered: &[String],
        counters: &UsageCounters,
    ) -> Result<(Vec<String>, Vec<String>), PipelineError> {
        let n = self.config.n;
        let (_, parsed) = self.ask_parsed(
            Stage::RelPrune,
            TemplateId::RelationPrune,
            bindings! {
                "sub_question" => sub_question,
                "source" => self.graph.label(source),
                "n" => n.to_string(),
                "candidates" => offered.to_vec(),
            },
            None,
            counters,
            |text| parse_relation_list(text, offered, n),
        )?;
        let kept = parsed.unwrap_or_default();
        let unused = offered.iter().filter(|o| !kept.contains(o)).cloned().collect();
        Ok((kept, unused))
    }

    fn llm_top_k(&self) -> Option<usize> {
        self.gateway
            .backend()
            .supports_logits()
            .then_some(self.config.au_top_k)
    }

    /// Matches answer strings to selected triples by target label or id,
    /// case-insensitively; the highest-u match supports each answer.
    fn ground_answers(&self, names: &[String], selection: &SelectionResult) -> (Vec<Answer>, Vec<String>) {
        let mut answers: Vec<Answer> = Vec::new();
        let mut dropped = Vec::new();
        for name in names {
            let folded = name.to_lowercase();
            let hit = selection.selected.iter().find(|s| {
                let target = s.triple.target();
                target.to_lowercase() == folded || self.graph.label(target).to_lowercase() == folded
            });
            match hit {
                Some(s) if answers.iter().any(|a| a.entity == s.triple.target()) => {}
                Some(s) => answers.push(Answer {
                    entity: s.triple.target().to_string(),
                    triple: s.triple.clone(),
                    u: s.u,
                }),
                None => dropped.push(name.clone()),
            }
        }
        (answers, dropped)
    }

    /// LLM triple pruning with the uncertainty gate.
    pub fn prune_triples(
        &self,
        sub_question: &str,
        source: &str,
        selection: &SelectionResult,
        counters: &UsageCounters,
        trace: &mut Trace,
        at: Cursor,
    ) -> Result<TriplePruneOutcome, PipelineError> {
        let texts: Vec<String> = selection
            .selected
            .iter()
            .map(|s| self.graph.verbalize(&s.triple))
            .collect();
        let source_label = self.graph.label(source);
        let (reply, parsed) = self.ask_parsed(
            Stage::TriPrune,
            TemplateId::TriplePrune,
            bindings! {
                "sub_question" => sub_question,
                "source" => source_label,
                "triples" => texts.clone(),
            },
            self.llm_top_k(),
            counters,
            parse_answer_line,
        )?;
        let mut names = parsed.unwrap_or_default();
        let mut au = None;
        let mut refined = false;
        let mut refine_evidence = 0;
        if let Some(logits) = reply.logit_values().filter(|l| !l.is_empty()) {
            let started = Instant::now();
            let report = uncertainty::assess(
                &logits,
                self.config.au_top_k,
                self.config.evidence_transform,
                self.config.au_threshold,
            )
            .ok();
            if let Some(report) = &report {
                if report.decision == GateDecision::Refine {
                    let evidence: Vec<String> = texts.iter().take(self.config.l).cloned().collect();
                    refine_evidence = evidence.len();
                    let previous = if names.is_empty() { "None".to_string() } else { names.join("; ") };
                    let (_, again) = self.ask_parsed(
                        Stage::AuGate,
                        TemplateId::TripleRefine,
                        bindings! {
                            "sub_question" => sub_question,
                            "source" => source_label,
                            "previous_answer" => previous,
                            "evidence" => evidence,
                        },
                        None,
                        counters,
                        parse_answer_line,
                    )?;
                    names = again.unwrap_or_default();
                    refined = true;
                }
                trace.push(
                    Stage::AuGate,
                    Some(at),
                    started,
                    json!({
                        "au": report.au,
                        "threshold": report.threshold,
                        "k": report.alphas.alphas().len(),
                        "decision": report.decision,
                        "refine_evidence": refine_evidence,
                        "refined_answer": refined.then(|| names.clone()),
                    }),
                );
            }
            au = report;
        }
        let (answers, dropped) = self.ground_answers(&names, selection);
        if !dropped.is_empty() {
            tracing::debug!(?dropped, "answers outside the selected triples were dropped");
        }
        Ok(TriplePruneOutcome {
            answers,
            dropped,
            au,
            refined,
            refine_evidence,
        })
    }

    /// One sub-question step from the frontier of `path`.
    fn step(
        &self,
        sub_question: &str,
        path: &PartialReasoningPath,
        subgraph: Option<&KnowledgeGraph>,
        counters: &UsageCounters,
        trace: &mut Trace,
        at: Cursor,
    ) -> Result<StepOutcome, PipelineError> {
        let source = path.frontier.as_str();
        let started = Instant::now();
        let one_hop = self
            .graph
            .one_hop(source, self.config.include_inverse)
            .map_err(PipelineError::graph(Stage::RelRetrieve))?;
        let candidates = scoring::rank_relations(&self.graph, sub_question, &one_hop, self.config.m, self.scorer.as_ref())
            .map_err(PipelineError::scoring(Stage::RelRetrieve))?;
        trace.push(
            Stage::RelRetrieve,
            Some(at),
            started,
            json!({"source": source, "one_hop": one_hop.len(), "ranked": candidates.ranked}),
        );
        let ranked = candidates.names();
        let mut outcome = StepOutcome {
            answers: Vec::new(),
            au_report: None,
            refined: false,
            fallback_rounds_used: 0,
            pruned_relations: Vec::new(),
            unused_relations: ranked.clone(),
        };
        let mut tried: BTreeSet<String> = BTreeSet::new();
        for round in 0..=self.config.max_fallback_rounds {
            let offered: Vec<String> = ranked.iter().filter(|r| !tried.contains(*r)).cloned().collect();
            if offered.is_empty() {
                break;
            }
            if round > 0 {
                outcome.fallback_rounds_used = round;
                trace.push(
                    Stage::Fallback,
                    Some(at),
                    Instant::now(),
                    json!({"round": round, "source": source, "offered": offered, "excluded": tried}),
                );
            }
            let started = Instant::now();
            let (kept, unused) = self.prune_relations(sub_question, source, &offered, counters)?;
            trace.push(
                Stage::RelPrune,
                Some(at),
                started,
                json!({"round": round, "offered": offered, "kept": kept, "unused": unused}),
            );
            if kept.is_empty() {
                break;
            }
            tried.extend(kept.iter().cloned());
            outcome.pruned_relations.extend(kept.iter().cloned());
            outcome.unused_relations.retain(|r| !kept.contains(r));

            let started = Instant::now();
            let triples: Vec<Triple> = one_hop.iter().filter(|t| kept.contains(&t.relation)).cloned().collect();
            let scored = scoring::score_triples(
                &self.graph,
                sub_question,
                source,
                &triples,
                subgraph,
                self.config.gnn_layers,
                self.scorer.as_ref(),
            )
            .map_err(PipelineError::scoring(Stage::TriRetrieve))?;
            let selection = scoring::top_p_select(scored, self.config.p);
            trace.push(
                Stage::TriRetrieve,
                Some(at),
                started,
                json!({
                    "candidates": triples.len(),
                    "selected": selection.selected.iter().map(|s| json!({
                        "triple": self.graph.verbalize(&s.triple),
                        "phi_t": s.phi_t,
                        "phi_e": s.phi_e,
                        "u": s.u,
                    })).collect::<Vec<_>>(),
                    "p": selection.p,
                    "cumulative": selection.cumulative,
                }),
            );

            let started = Instant::now();
            let pruned = self.prune_triples(sub_question, source, &selection, counters, trace, at)?;
            trace.push(
                Stage::TriPrune,
                Some(at),
                started,
                json!({
                    "round": round,
                    "path_length_before": path.len(),
                    "answers": pruned.answers.iter().map(|a| self.graph.label(&a.entity)).collect::<Vec<_>>(),
                    "extended_lengths": vec![path.len() + 1; pruned.answers.len()],
                    "dropped": pruned.dropped,
                    "refined": pruned.refined,
                }),
            );
            outcome.au_report = pruned.au.or(outcome.au_report.take());
            outcome.refined |= pruned.refined;
            if !pruned.answers.is_empty() {
                outcome.answers = pruned.answers;
                break;
            }
        }
        Ok(outcome)
    }

    /// Runs one chain to its depth, branching on every answer and keeping
    /// the `beam_width` best frontier paths by the score of their newest hop.
    pub fn run_chain(
        &self,
        index: usize,
        chain: &SubQuestionChain,
        counters: &UsageCounters,
        trace: &mut Trace,
    ) -> Result<ChainRun, PipelineError> {
        let subgraph = if self.scorer.capabilities().entity_score {
            let radius = self.config.subgraph_radius.unwrap_or(chain.depth() + 1);
            Some(
                self.graph
                    .subgraph_for_key_entity(&chain.key_entity, radius)
                    .map_err(PipelineError::graph(Stage::TriRetrieve))?,
            )
        } else {
            None
        };
        let mut run = ChainRun {
            chain: chain.clone(),
            paths: Vec::new(),
            dead_at: None,
            fallback_rounds: 0,
            refinements: 0,
        };
        let mut frontier = vec![PartialReasoningPath::new(&chain.key_entity)];
        for (depth, sub_question) in chain.sub_questions.iter().enumerate() {
            let at = Cursor { chain: index, depth };
            let mut next: Vec<PartialReasoningPath> = Vec::new();
            for path in &frontier {
                let outcome = self.step(sub_question, path, subgraph.as_ref(), counters, trace, at)?;
                run.fallback_rounds += outcome.fallback_rounds_used;
                run.refinements += usize::from(outcome.refined);
                for a in outcome.answers {
                    let extended = path.extended(a.triple, a.u);
                    if !next.iter().any(|p| p.triples == extended.triples) {
                        next.push(extended);
                    }
                }
            }
            next.sort_by(|a, b| b.last_score().total_cmp(&a.last_score()));
            next.truncate(self.config.beam_width);
            if next.is_empty() {
                run.dead_at = Some(depth);
                tracing::info!(chain = index, depth, key = %chain.key_entity, "chain dead-ended");
                return Ok(run);
            }
            frontier = next;
        }
        run.paths = frontier;
        Ok(run)
    }

    pub fn decompose(
        &self,
        question: &Question,
        counters: &UsageCounters,
        trace: &mut Trace,
    ) -> Result<DecompositionResult, PipelineError> {
        let started = Instant::now();
        let raw = decompose::decompose(question, &self.gateway, counters, self.config.parse_retries)?;
        let result = decompose::validate_chains(raw, &self.graph, &question.key_entities)?;
        trace.push(
            Stage::Decompose,
            None,
            started,
            json!({"chains": result.chains, "unresolved": result.unresolved, "raw": result.raw_llm_output}),
        );
        Ok(result)
    }

    /// Decomposes the question and runs every chain independently.
    pub fn run_question(
        &self,
        question: &Question,
        counters: &UsageCounters,
        trace: &mut Trace,
    ) -> Result<RunOutput, PipelineError> {
        let decomposition = self.decompose(question, counters, trace)?;
        let chains = decomposition
            .chains
            .iter()
            .enumerate()
            .map(|(i, c)| self.run_chain(i, c, counters, trace))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RunOutput { decomposition, chains })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offered() -> Vec<String> {
        ["a.b.c", "sports.sports_team_owner.teams_owned", "x.y.z", "p.q.r"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn relation_list_whitelist_and_cap() {
        let text = "First: ...\nReturn: sports.sports_team_owner.teams_owned, made.up.rel, a.b.c, x.y.z, p.q.r";
        assert_eq!(
            parse_relation_list(text, &offered(), 3).unwrap(),
            vec!["sports.sports_team_owner.teams_owned", "a.b.c", "x.y.z"]
        );
        assert_eq!(parse_relation_list("Return: None", &offered(), 3), Some(vec![]));
        assert_eq!(parse_relation_list("no tag here", &offered(), 3), None);
        assert_eq!(parse_relation_list("return: [a.b.c].", &offered(), 3), Some(vec!["a.b.c".to_string()]));
    }

    #[test]
    fn answer_line_forms() {
        assert_eq!(parse_answer_line("reasoning\nAnswer: Germany; France."), Some(vec!["Germany".into(), "France".into()]));
        assert_eq!(parse_answer_line("Answer: None"), Some(vec![]));
        assert_eq!(parse_answer_line("Answer: X\nAnswer: Y"), Some(vec!["Y".into()]));
        assert_eq!(parse_answer_line("I think Germany"), None);
    }

    #[test]
    fn path_chaining() {
        let p = PartialReasoningPath::new("N")
            .extended(Triple::inverse("W", "airport.serves", "N"), 0.6)
            .extended(Triple::forward("W", "located.in", "DE"), 0.9);
        assert!(p.is_chained());
        assert_eq!(p.frontier, "DE");
        assert_eq!(p.entities().collect::<Vec<_>>(), vec!["N", "W", "DE"]);
        let mut broken = p.clone();
        broken.triples.swap(0, 1);
        assert!(!broken.is_chained());
    }

    #[test]
    fn trace_round_trip() {
        let mut t = Trace::new();
        t.push(Stage::RelPrune, Some(Cursor { chain: 1, depth: 0 }), Instant::now(), json!({"x": 1}));
        t.push(Stage::Final, None, Instant::now(), json!(null));
        let mut buf = Vec::new();
        write_trace_jsonl(t.records(), &mut buf).unwrap();
        let back = read_trace_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, t.records());
        assert!(back[0].elapsed <= back[1].elapsed);
        assert!(String::from_utf8(buf).unwrap().starts_with("{\"stage\":\"rel_prune\""));
    }
}
