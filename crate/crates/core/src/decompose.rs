//! Question decomposition into per-entity sub-question chains.
//!
//! The LLM replies with numbered tag pairs:
//!
//! ```text
//! SUB-QUESTION1: What airport serves Nijmegen?
//! ENTITY1: Nijmegen
//! ```
//!
//! Pairs sharing an entity form one chain, ordered by tag index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bindings;
use crate::graph::KnowledgeGraph;
use crate::llm::{Gateway, LlmError, TemplateId, UsageCounters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    /// Optional mention-to-entity-id links supplied with the dataset.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub key_entities: BTreeMap<String, String>,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_relations: Vec<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            key_entities: BTreeMap::new(),
            answers: Vec::new(),
            gold_relations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestionChain {
    /// Graph entity id once validated; the raw mention before that.
    pub key_entity: String,
    pub mention: String,
    pub sub_questions: Vec<String>,
}

impl SubQuestionChain {
    pub fn depth(&self) -> usize {
        self.sub_questions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub chains: Vec<SubQuestionChain>,
    pub raw_llm_output: String,
    /// Mentions dropped during validation because they matched no entity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("decomposition output unparseable after {attempts} attempts: {raw:?}")]
    Unparseable { attempts: usize, raw: String },
    #[error("no key entity could be linked to the graph (mentions: {mentions:?})")]
    NoKeyEntity { mentions: Vec<String>, raw: String },
}

pub const DEFAULT_RETRIES: usize = 2;

/// Recognizes `SUB-QUESTION<i>:` / `ENTITY<i>:` in any case, with optional
/// list markers or a space before the index.
fn parse_tag(line: &str) -> Option<(bool, usize, &str)> {
    let line = line.trim().trim_start_matches(['-', '*']).trim_start();
    let upper = line.to_ascii_uppercase();
    let (is_question, rest_at) = if upper.starts_with("SUB-QUESTION") {
        (true, "SUB-QUESTION".len())
    } else if upper.starts_with("SUBQUESTION") {
        (true, "SUBQUESTION".len())
    } else if upper.starts_with("ENTITY") {
        (false, "ENTITY".len())
    } else {
        return None;
    };
    let rest = line[rest_at..].trim_start();
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    let index = rest[..digits].parse().ok()?;
    let body = rest[digits..].trim_start().strip_prefix(':')?.trim();
    let body = body.trim_matches('"').trim();
    (!body.is_empty()).then_some((is_question, index, body))
}

/// Parses tagged output into chains; `None` when no complete pair exists.
pub fn parse_decomposition(raw: &str) -> Option<Vec<SubQuestionChain>> {
    let mut questions: BTreeMap<usize, &str> = BTreeMap::new();
    let mut entities: BTreeMap<usize, &str> = BTreeMap::new();
    for line in raw.lines() {
        if let Some((is_q, i, body)) = parse_tag(line) {
            let slot = if is_q { &mut questions } else { &mut entities };
            slot.entry(i).or_insert(body);
        }
    }
    let mut chains: Vec<SubQuestionChain> = Vec::new();
    let mut by_entity: HashMap<&str, usize> = HashMap::new();
    for (i, q) in &questions {
        let Some(&e) = entities.get(i) else { continue };
        let at = *by_entity.entry(e).or_insert_with(|| {
            chains.push(SubQuestionChain {
                key_entity: e.to_string(),
                mention: e.to_string(),
                sub_questions: Vec::new(),
            });
            chains.len() - 1
        });
        chains[at].sub_questions.push(q.to_string());
    }
    (!chains.is_empty()).then_some(chains)
}

/// Asks the LLM for a decomposition, resending the same prompt up to
/// `retries` more times when the reply has no usable tag pair.
pub fn decompose(
    question: &Question,
    gateway: &Gateway,
    counters: &UsageCounters,
    retries: usize,
) -> Result<DecompositionResult, DecomposeError> {
    let mut raw = String::new();
    for attempt in 0..=retries {
        let reply = gateway.ask(
            TemplateId::Decompose,
            bindings! {"question" => question.text.as_str()},
            None,
            counters,
        )?;
        raw = reply.text;
        if let Some(chains) = parse_decomposition(&raw) {
            return Ok(DecompositionResult {
                chains,
                raw_llm_output: raw,
                unresolved: Vec::new(),
            });
        }
        tracing::warn!(question = %question.id, attempt, "unparseable decomposition");
    }
    Err(DecomposeError::Unparseable {
        attempts: retries + 1,
        raw,
    })
}

fn link<'a>(mention: &str, links: &'a BTreeMap<String, String>) -> Option<&'a str> {
    links.get(mention).map(String::as_str).or_else(|| {
        let folded = mention.to_lowercase();
        links
            .iter()
            .find(|(k, _)| k.to_lowercase() == folded)
            .map(|(_, v)| v.as_str())
    })
}

/// Links each chain's mention to a graph entity and merges chains that land
/// on the same entity, keeping the first one's sub-questions.
pub fn validate_chains(
    result: DecompositionResult,
    graph: &KnowledgeGraph,
    links: &BTreeMap<String, String>,
) -> Result<DecompositionResult, DecomposeError> {
    let mut chains: Vec<SubQuestionChain> = Vec::new();
    let mut unresolved = result.unresolved;
    for chain in result.chains {
        let id = link(&chain.mention, links)
            .filter(|id| graph.contains_entity(id))
            .or_else(|| graph.resolve(&chain.mention));
        match id {
            Some(id) if chains.iter().any(|c| c.key_entity == id) => {
                tracing::debug!(mention = %chain.mention, "duplicate key entity merged");
            }
            Some(id) => chains.push(SubQuestionChain {
                key_entity: id.to_string(),
                ..chain
            }),
            None => unresolved.push(chain.mention),
        }
    }
    if chains.is_empty() {
        return Err(DecomposeError::NoKeyEntity {
            mentions: unresolved,
            raw: result.raw_llm_output,
        });
    }
    Ok(DecompositionResult {
        chains,
        raw_llm_output: result.raw_llm_output,
        unresolved,
    })
}
