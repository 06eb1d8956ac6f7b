//! Final stage: prefix enumeration, relevance repacking and answering.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::bindings;
use crate::config::Placement;
use crate::engine::{PartialReasoningPath, PipelineError, Stage};
use crate::graph::{KnowledgeGraph, Triple};
use crate::llm::{Gateway, TemplateId, UsageCounters};
use crate::scoring::{cosine, ScorerBackend, ScoringError};

/// Evidence line used when no reasoning path survived.
pub const EMPTY_EVIDENCE: &str = "(no reasoning paths were found for this question)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prefix {
    pub triples: Vec<Triple>,
    pub origin_path: usize,
    pub k: usize,
    pub relevance: f64,
}

/// Every prefix of every path, in path order then length order.
///
/// With `dedup`, a triple sequence already emitted from an earlier path is
/// skipped. The second value is the count before deduplication.
pub fn enumerate_prefixes(paths: &[PartialReasoningPath], dedup: bool) -> (Vec<Prefix>, usize) {
    let mut seen: HashSet<&[Triple]> = HashSet::new();
    let mut out = Vec::new();
    let mut total = 0;
    for (origin_path, path) in paths.iter().enumerate() {
        for k in 1..=path.len() {
            total += 1;
            let triples = &path.triples[..k];
            if dedup && !seen.insert(triples) {
                continue;
            }
            out.push(Prefix {
                triples: triples.to_vec(),
                origin_path,
                k,
                relevance: 0.0,
            });
        }
    }
    (out, total)
}

/// `h1 r1 t1 → h2 r2 t2`, with relation words spaced out.
pub fn verbalize_prefix(graph: &KnowledgeGraph, triples: &[Triple]) -> String {
    triples
        .iter()
        .map(|t| graph.verbalize(t))
        .collect::<Vec<_>>()
        .join(" → ")
}

/// Scores prefixes by embedding cosine against the question and sorts them
/// most relevant first, ties by `(origin_path, k)`.
pub fn repack(
    graph: &KnowledgeGraph,
    mut prefixes: Vec<Prefix>,
    question: &str,
    backend: &dyn ScorerBackend,
) -> Result<Vec<Prefix>, ScoringError> {
    if prefixes.is_empty() {
        return Ok(prefixes);
    }
    let mut texts = vec![question.to_string()];
    texts.extend(prefixes.iter().map(|p| verbalize_prefix(graph, &p.triples)));
    let vectors = backend.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(ScoringError::LengthMismatch {
            expected: texts.len(),
            found: vectors.len(),
        });
    }
    for (p, v) in prefixes.iter_mut().zip(&vectors[1..]) {
        p.relevance = cosine(&vectors[0], v);
    }
    prefixes.sort_by(|a, b| {
        b.relevance
            .total_cmp(&a.relevance)
            .then(a.origin_path.cmp(&b.origin_path))
            .then(a.k.cmp(&b.k))
    });
    Ok(prefixes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalContext {
    pub question: String,
    /// In prompt order.
    pub ordered_prefixes: Vec<Prefix>,
    /// Prefix count before deduplication.
    pub enumerated: usize,
    pub evidence: Vec<String>,
    /// The full final-answer prompt.
    pub rendered: String,
}

impl FinalContext {
    pub fn is_empty(&self) -> bool {
        self.ordered_prefixes.is_empty()
    }
}

pub fn build_context(
    graph: &KnowledgeGraph,
    gateway: &Gateway,
    question: &str,
    paths: &[PartialReasoningPath],
    backend: &dyn ScorerBackend,
    dedup: bool,
    placement: Placement,
) -> Result<FinalContext, PipelineError> {
    let (prefixes, enumerated) = enumerate_prefixes(paths, dedup);
    let mut ordered = repack(graph, prefixes, question, backend).map_err(|source| PipelineError::Scoring {
        stage: Stage::Final,
        source,
    })?;
    if placement == Placement::Last {
        ordered.reverse();
    }
    let mut evidence: Vec<String> = ordered.iter().map(|p| verbalize_prefix(graph, &p.triples)).collect();
    if evidence.is_empty() {
        evidence.push(EMPTY_EVIDENCE.to_string());
    }
    let rendered = gateway
        .render(
            TemplateId::FinalAnswer,
            &bindings! {"question" => question, "evidence" => evidence.clone()},
        )
        .map_err(|e| PipelineError::llm(Stage::Final)(e.into()))?;
    Ok(FinalContext {
        question: question.to_string(),
        ordered_prefixes: ordered,
        enumerated,
        evidence,
        rendered,
    })
}

/// Values of `ANSWER:` lines in order, `None` entries and duplicates
/// removed. `None` when the reply has no such line at all.
pub fn parse_final_answers(text: &str) -> Option<Vec<String>> {
    let mut found = false;
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim_start();
        let Some(head) = line.get(..7) else { continue };
        if !head.eq_ignore_ascii_case("answer:") {
            continue;
        }
        found = true;
        let value = line[7..].trim();
        let value = value.strip_suffix('.').unwrap_or(value);
        let value = value.trim_matches(|c: char| "\"'`".contains(c)).trim();
        if !value.is_empty() && !value.eq_ignore_ascii_case("none") && !out.iter().any(|o| o == value) {
            out.push(value.to_string());
        }
    }
    found.then_some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answers: Vec<String>,
    pub raw: String,
    /// No evidence was available, or the LLM named no answer.
    pub unanswerable: bool,
}

/// Asks the final question. The LLM is consulted even with empty evidence.
pub fn answer(
    gateway: &Gateway,
    context: &FinalContext,
    counters: &UsageCounters,
    retries: usize,
) -> Result<FinalAnswer, PipelineError> {
    let request = gateway
        .request(
            TemplateId::FinalAnswer,
            bindings! {"question" => context.question.as_str(), "evidence" => context.evidence.clone()},
            None,
        )
        .map_err(PipelineError::llm(Stage::Final))?;
    let mut raw = String::new();
    for _ in 0..=retries {
        raw = gateway
            .complete(&request, counters)
            .map_err(PipelineError::llm(Stage::Final))?
            .text;
        let parsed = parse_final_answers(&raw);
        if parsed.is_none() && !context.is_empty() {
            tracing::warn!("final answer without ANSWER lines; asking again");
            continue;
        }
        let answers = if context.is_empty() { Vec::new() } else { parsed.unwrap_or_default() };
        return Ok(FinalAnswer {
            unanswerable: answers.is_empty(),
            answers,
            raw,
        });
    }
    Err(PipelineError::FinalUnparseable {
        attempts: retries + 1,
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::LexicalScorer;
    use proptest::prelude::*;

    fn path(source: &str, hops: &[(&str, &str)]) -> PartialReasoningPath {
        let mut p = PartialReasoningPath::new(source);
        for (rel, tail) in hops {
            let from = p.frontier.clone();
            p = p.extended(Triple::forward(from, *rel, *tail), 0.5);
        }
        p
    }

    #[test]
    fn prefix_counts_and_dedup() {
        let a = path("A", &[("r", "B"), ("s", "C")]);
        let b = path("A", &[("r", "B"), ("t", "D"), ("u", "E")]);
        let (all, total) = enumerate_prefixes(&[a.clone(), b.clone()], false);
        assert_eq!((all.len(), total), (5, 5));
        let (dedup, total) = enumerate_prefixes(&[a, b], true);
        assert_eq!((dedup.len(), total), (4, 5));
        assert_eq!(dedup.iter().filter(|p| p.k == 1).count(), 1);
    }

    #[test]
    fn final_answer_lines() {
        assert_eq!(
            parse_final_answers("Reasoning.\nANSWER: Germany\nanswer: \"Berlin\".\nANSWER: Germany"),
            Some(vec!["Germany".to_string(), "Berlin".to_string()])
        );
        assert_eq!(parse_final_answers("ANSWER: None"), Some(vec![]));
        assert_eq!(parse_final_answers("Germany"), None);
    }

    #[test]
    fn equal_scores_tie_break() {
        let g = KnowledgeGraph::from_triples([("A", "r", "B"), ("B", "s", "C")]);
        let p = path("A", &[("r", "B"), ("s", "C")]);
        let (prefixes, _) = enumerate_prefixes(&[p.clone(), p], false);
        // No content words in the question: every cosine is zero.
        let out = repack(&g, prefixes, "the", &LexicalScorer::default()).unwrap();
        let order: Vec<(usize, usize)> = out.iter().map(|p| (p.origin_path, p.k)).collect();
        assert_eq!(order, vec![(0, 1), (0, 2), (1, 1), (1, 2)]);
    }

    fn paths_strategy() -> impl Strategy<Value = Vec<PartialReasoningPath>> {
        let hops = prop::collection::vec((0u8..3, 0u8..4), 1..5);
        prop::collection::vec(hops, 0..6).prop_map(|ps| {
            ps.into_iter()
                .map(|hs| {
                    let hops: Vec<(String, String)> = hs.iter().map(|(r, t)| (format!("r{r}"), format!("E{t}"))).collect();
                    let refs: Vec<(&str, &str)> = hops.iter().map(|(r, t)| (r.as_str(), t.as_str())).collect();
                    path("E0", &refs)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn prefixes_reconstruct_and_repack_permutes(paths in paths_strategy(), dedup in any::<bool>()) {
            let (prefixes, total) = enumerate_prefixes(&paths, dedup);
            prop_assert_eq!(total, paths.iter().map(|p| p.len()).sum::<usize>());
            for p in &prefixes {
                prop_assert!(p.k >= 1 && p.k <= paths[p.origin_path].len());
                prop_assert_eq!(&p.triples[..], &paths[p.origin_path].triples[..p.k]);
            }
            let facts: Vec<(String, String, String)> = paths
                .iter()
                .flat_map(|p| p.triples.iter().map(|t| (t.head.clone(), t.relation.clone(), t.tail.clone())))
                .collect();
            let g = KnowledgeGraph::from_triples(facts);
            let out = repack(&g, prefixes.clone(), "E1 r2 E3", &LexicalScorer::default()).unwrap();
            let key = |p: &Prefix| (p.origin_path, p.k);
            let mut a: Vec<_> = prefixes.iter().map(key).collect();
            let mut b: Vec<_> = out.iter().map(key).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
