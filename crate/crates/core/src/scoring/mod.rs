//! Relation and triple scoring for one sub-question.
//!
//! Relations are ranked by reranking the source entity's one-hop triples.
//! Triples get a semantic score `phi_t` (softmax of embedding cosines), a
//! structural score `phi_e` (per-tail probabilities from the backend, uniform
//! when unavailable) and the combined `u = softmax(phi_t + phi_e)`, from
//! which a top-p prefix is kept.

mod http;
mod lexical;

pub use http::{HttpScorer, HttpScorerConfig};
pub use lexical::LexicalScorer;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, KnowledgeGraph, Triple};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("retrieval-scoring backend unreachable at {endpoint}: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("retrieval-scoring backend error: {0}")]
    Protocol(String),
    #[error("backend lacks mandatory capability `{0}`")]
    MissingCapability(&'static str),
    #[error("expected {expected} scores, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("embedding dimension mismatch: {expected} vs {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no candidates to score")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, ScoringError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub relation_rerank: bool,
    pub triple_embed: bool,
    pub entity_score: bool,
}

impl Capabilities {
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let has = |n: &str| names.iter().any(|s| s.as_ref() == n);
        Self {
            relation_rerank: has("relation_rerank"),
            triple_embed: has("triple_embed"),
            entity_score: has("entity_score"),
        }
    }
}

/// Input to structural entity scoring.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityScoreRequest<'a> {
    pub query: &'a str,
    pub subgraph: &'a [(String, String, String)],
    pub source: &'a str,
    pub tails: &'a [String],
    /// Message-passing depth hint for the backend.
    pub layers: Option<usize>,
}

pub trait ScorerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    /// One relevance score per document, order-aligned.
    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    /// Probability per requested tail. `Ok(None)` means the backend cannot
    /// score entities and the caller should fall back to uniform.
    fn entity_scores(&self, request: &EntityScoreRequest<'_>) -> Result<Option<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCandidateSet {
    pub sub_question: String,
    /// Descending by score, names unique, ties by name.
    pub ranked: Vec<(String, f64)>,
    pub m: usize,
}

impl RelationCandidateSet {
    pub fn names(&self) -> Vec<String> {
        self.ranked.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub phi_t: f64,
    pub phi_e: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Descending by `u`.
    pub selected: Vec<ScoredTriple>,
    pub p: f64,
    pub cumulative: f64,
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(ScoringError::LengthMismatch { expected, found })
    }
}

/// Ranks the relations appearing in `triples` by the best reranker score of
/// any triple carrying them and keeps the top `m`.
pub fn rank_relations(
    graph: &KnowledgeGraph,
    sub_question: &str,
    triples: &[Triple],
    m: usize,
    backend: &dyn ScorerBackend,
) -> Result<RelationCandidateSet> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    if !triples.is_empty() {
        let docs: Vec<String> = triples.iter().map(|t| graph.verbalize(t)).collect();
        let scores = backend.rerank(sub_question, &docs)?;
        check_len(docs.len(), scores.len())?;
        for (t, s) in triples.iter().zip(scores) {
            let slot = best.entry(&t.relation).or_insert(f64::NEG_INFINITY);
            if s > *slot {
                *slot = s;
            }
        }
    }
    // BTreeMap iteration is by name, so a stable sort gives name tie-breaks.
    let mut ranked: Vec<(String, f64)> = best.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(m);
    Ok(RelationCandidateSet {
        sub_question: sub_question.to_string(),
        ranked,
        m,
    })
}

/// Top-`m` relations around `source`. A source without neighbours yields an
/// empty set.
pub fn retrieve_relations(
    graph: &KnowledgeGraph,
    source: &str,
    sub_question: &str,
    m: usize,
    backend: &dyn ScorerBackend,
) -> Result<RelationCandidateSet> {
    let triples = graph.one_hop(source, true)?;
    rank_relations(graph, sub_question, &triples, m, backend)
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // An empty float sum is -0.0; report plain zero.
    if dot == 0.0 || na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `phi_t` for each candidate, order-aligned.
pub fn semantic_triple_scores(
    graph: &KnowledgeGraph,
    sub_question: &str,
    candidates: &[Triple],
    backend: &dyn ScorerBackend,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(ScoringError::Empty);
    }
    let mut texts = Vec::with_capacity(candidates.len() + 1);
    texts.push(sub_question.to_string());
    texts.extend(candidates.iter().map(|t| graph.verbalize(t)));
    let vectors = backend.embed(&texts)?;
    check_len(texts.len(), vectors.len())?;
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(ScoringError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let sims: Vec<f64> = vectors[1..].iter().map(|v| cosine(&vectors[0], v)).collect();
    Ok(softmax(&sims))
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `phi_e` for each candidate, order-aligned.
///
/// Each triple inherits the probability of the entity it reaches; the result
/// is renormalized over the candidates, so triples sharing a tail each keep
/// the full tail score rather than splitting it.
pub fn structure_entity_scores(
    sub_question: &str,
    source: &str,
    candidates: &[Triple],
    subgraph: Option<&KnowledgeGraph>,
    layers: Option<usize>,
    backend: &dyn ScorerBackend,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(ScoringError::Empty);
    }
    let (true, Some(subgraph)) = (backend.capabilities().entity_score, subgraph) else {
        return Ok(uniform(candidates.len()));
    };
    let mut tails: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for t in candidates {
        index.entry(t.target()).or_insert_with(|| {
            tails.push(t.target().to_string());
            tails.len() - 1
        });
    }
    let facts: Vec<(String, String, String)> = subgraph
        .triples()
        .map(|t| (t.head, t.relation, t.tail))
        .collect();
    let request = EntityScoreRequest {
        query: sub_question,
        subgraph: &facts,
        source,
        tails: &tails,
        layers,
    };
    let Some(tail_scores) = backend.entity_scores(&request)? else {
        return Ok(uniform(candidates.len()));
    };
    check_len(tails.len(), tail_scores.len())?;
    let raw: Vec<f64> = candidates
        .iter()
        .map(|t| tail_scores[index[t.target()]].max(0.0))
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum.is_nan() || sum <= 0.0 || !sum.is_finite() {
        return Ok(uniform(candidates.len()));
    }
    Ok(raw.into_iter().map(|x| x / sum).collect())
}

/// `u = softmax(phi_t + phi_e)`.
pub fn combine_scores(phi_t: &[f64], phi_e: &[f64]) -> Result<Vec<f64>> {
    check_len(phi_t.len(), phi_e.len())?;
    let sum: Vec<f64> = phi_t.iter().zip(phi_e).map(|(a, b)| a + b).collect();
    Ok(softmax(&sum))
}

/// Runs both scorers and combines them; output keeps candidate order.
pub fn score_triples(
    graph: &KnowledgeGraph,
    sub_question: &str,
    source: &str,
    candidates: &[Triple],
    subgraph: Option<&KnowledgeGraph>,
    layers: Option<usize>,
    backend: &dyn ScorerBackend,
) -> Result<Vec<ScoredTriple>> {
    let phi_t = semantic_triple_scores(graph, sub_question, candidates, backend)?;
    let phi_e = structure_entity_scores(sub_question, source, candidates, subgraph, layers, backend)?;
    let u = combine_scores(&phi_t, &phi_e)?;
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, t)| ScoredTriple {
            triple: t.clone(),
            phi_t: phi_t[i],
            phi_e: phi_e[i],
            u: u[i],
        })
        .collect())
}

/// Smallest descending-`u` prefix whose cumulative score strictly exceeds
/// `p`, crossing triple included. Equal scores keep input order. At least
/// one triple is selected; if the sum never exceeds `p` everything is.
pub fn top_p_select(mut scored: Vec<ScoredTriple>, p: f64) -> SelectionResult {
    scored.sort_by(|a, b| b.u.total_cmp(&a.u));
    let mut cumulative = 0.0;
    let mut take = 0;
    for s in &scored {
        cumulative += s.u;
        take += 1;
        if cumulative > p {
            break;
        }
    }
    scored.truncate(take);
    SelectionResult {
        selected: scored,
        p,
        cumulative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(us: &[f64]) -> Vec<ScoredTriple> {
        us.iter()
            .enumerate()
            .map(|(i, &u)| ScoredTriple {
                triple: Triple::forward("a", "r", format!("t{i:02}")),
                phi_t: 0.0,
                phi_e: 0.0,
                u,
            })
            .collect()
    }

    /// Canned backend for shape tests.
    struct Fixed {
        rerank: Vec<f64>,
        tails: Option<Vec<f64>>,
    }

    impl ScorerBackend for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                relation_rerank: true,
                triple_embed: true,
                entity_score: self.tails.is_some(),
            }
        }
        fn rerank(&self, _: &str, documents: &[String]) -> Result<Vec<f64>> {
            Ok(self.rerank[..documents.len()].to_vec())
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(texts.iter().map(|_| vec![1.0]).collect())
        }
        fn entity_scores(&self, _: &EntityScoreRequest<'_>) -> Result<Option<Vec<f64>>> {
            Ok(self.tails.clone())
        }
    }

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::from_triples([
            ("A", "x.y.r1", "B"),
            ("A", "x.y.r1", "C"),
            ("A", "x.y.r2", "D"),
            ("E", "x.y.r3", "A"),
        ])
    }

    #[test]
    fn relation_score_is_max_over_triples() {
        let g = graph();
        // one_hop order: (A r1 B), (A r1 C), (A r2 D), inverse (E r3 A).
        let b = Fixed {
            rerank: vec![0.2, 0.9, 0.5, 0.9],
            tails: None,
        };
        let set = retrieve_relations(&g, "A", "q", 15, &b).unwrap();
        assert_eq!(
            set.ranked,
            vec![("x.y.r1".into(), 0.9), ("x.y.r3".into(), 0.9), ("x.y.r2".into(), 0.5)]
        );
        let set = retrieve_relations(&g, "A", "q", 1, &b).unwrap();
        assert_eq!(set.names(), vec!["x.y.r1".to_string()]);
    }

    #[test]
    fn no_triples_gives_empty_set() {
        let g = graph();
        let b = Fixed { rerank: vec![], tails: None };
        assert!(rank_relations(&g, "q", &[], 15, &b).unwrap().is_empty());
        assert!(retrieve_relations(&g, "nowhere", "q", 15, &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[1.0, 0.0]);
        assert!((s[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(softmax(&[3.0]), vec![1.0]);
        assert_eq!(softmax(&[0.2, 0.2]), vec![0.5, 0.5]);
    }

    #[test]
    fn combine_example() {
        let u = combine_scores(&[0.6, 0.4], &[0.5, 0.5]).unwrap();
        let e = (0.2f64).exp();
        assert!((u[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!(combine_scores(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn shared_tail_is_renormalized_not_split() {
        let cands = vec![
            Triple::forward("A", "r", "B"),
            Triple::forward("A", "s", "B"),
            Triple::forward("A", "r", "C"),
        ];
        let g = KnowledgeGraph::from_triples([("A", "r", "B"), ("A", "s", "B"), ("A", "r", "C")]);
        let b = Fixed {
            rerank: vec![],
            tails: Some(vec![0.6, 0.4]),
        };
        let phi = structure_entity_scores("q", "A", &cands, Some(&g), None, &b).unwrap();
        assert!((phi[0] - 0.375).abs() < 1e-12 && (phi[1] - 0.375).abs() < 1e-12 && (phi[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn uniform_without_capability() {
        let cands: Vec<Triple> = (0..4).map(|i| Triple::forward("A", "r", format!("T{i}"))).collect();
        let b = Fixed { rerank: vec![], tails: None };
        let g = graph();
        assert_eq!(structure_entity_scores("q", "A", &cands, Some(&g), None, &b).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn top_p_examples() {
        let r = top_p_select(scored(&[0.5, 0.3, 0.15, 0.05]), 0.9);
        assert_eq!(r.selected.len(), 3);
        assert!((r.cumulative - 0.95).abs() < 1e-12);
        assert_eq!(top_p_select(scored(&[0.95, 0.05]), 0.9).selected.len(), 1);
        assert_eq!(top_p_select(scored(&[0.25; 4]), 1.0).selected.len(), 4);
    }

    #[test]
    fn top_p_ties_keep_input_order() {
        let r = top_p_select(scored(&[0.2, 0.4, 0.2, 0.2]), 0.5);
        let tails: Vec<&str> = r.selected.iter().map(|s| s.triple.tail.as_str()).collect();
        assert_eq!(tails, vec!["t01", "t00"]);
    }

    fn prob_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, 1..20).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn combine_is_permutation_equivariant(pt in prob_vec(), shift in 0usize..20) {
            let pe = softmax(&pt.iter().map(|x| x * 3.0).collect::<Vec<_>>());
            let u = combine_scores(&pt, &pe).unwrap();
            let k = shift % pt.len();
            let rot = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(k); v };
            let u2 = combine_scores(&rot(&pt), &rot(&pe)).unwrap();
            for (a, b) in rot(&u).iter().zip(&u2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn top_p_always_selects_something(v in prob_vec(), p in 0.001f64..=1.0) {
            let r = top_p_select(scored(&v), p);
            prop_assert!(!r.selected.is_empty());
            let sum: f64 = r.selected.iter().map(|s| s.u).sum();
            prop_assert!((sum - r.cumulative).abs() < 1e-12);
        }
    }
}
