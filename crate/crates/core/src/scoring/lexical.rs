//! Token-overlap scorer that needs no model files.
//!
//! Text is lowercased, split on non-alphanumerics, stripped of stopwords and
//! a plural `s`, then weighted by IDF over the graph's verbalized facts.
//! Rerank scores are exact sparse cosines; embeddings hash the same weights
//! into a fixed-width vector.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{Capabilities, EntityScoreRequest, Result, ScorerBackend};
use crate::graph::KnowledgeGraph;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "has", "have", "in",
    "is", "it", "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "what", "which", "who",
    "whom", "whose", "with",
];

pub const DEFAULT_DIM: usize = 512;

fn stem(word: &str) -> &str {
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        &word[..word.len() - 1]
    } else {
        word
    }
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w).to_string())
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone)]
pub struct LexicalScorer {
    idf: HashMap<String, f64>,
    unseen_idf: f64,
    dim: usize,
}

impl Default for LexicalScorer {
    /// Every token weighs 1.
    fn default() -> Self {
        Self {
            idf: HashMap::new(),
            unseen_idf: 1.0,
            dim: DEFAULT_DIM,
        }
    }
}

impl LexicalScorer {
    /// IDF `ln(1 + N / (1 + df))` over the verbalized facts of `graph`.
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0usize;
        for t in graph.triples() {
            n += 1;
            let uniq: HashSet<String> = tokens(&graph.verbalize(&t)).into_iter().collect();
            for tok in uniq {
                *df.entry(tok).or_default() += 1;
            }
        }
        let idf_of = |d: usize| (1.0 + n as f64 / (1.0 + d as f64)).ln();
        Self {
            idf: df.into_iter().map(|(t, d)| (t, idf_of(d))).collect(),
            unseen_idf: idf_of(0).max(1.0),
            dim: DEFAULT_DIM,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    fn weights(&self, text: &str) -> BTreeMap<String, f64> {
        let mut w = BTreeMap::new();
        for tok in tokens(text) {
            let idf = self.idf.get(&tok).copied().unwrap_or(self.unseen_idf);
            *w.entry(tok).or_insert(0.0) += idf;
        }
        w
    }

    fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
        let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
        let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if dot == 0.0 || na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    /// L2-normalized hashed vector; all zeros for text without content words.
    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (tok, w) in self.weights(text) {
            let h = fnv1a(&tok);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign * w;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl ScorerBackend for LexicalScorer {
    fn name(&self) -> &str {
        "lexical"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            relation_rerank: true,
            triple_embed: true,
            entity_score: false,
        }
    }

    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        let q = self.weights(query);
        Ok(documents
            .iter()
            .map(|d| Self::sparse_cosine(&q, &self.weights(d)))
            .collect())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn entity_scores(&self, _: &EntityScoreRequest<'_>) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}
